//! The quantum friction model: closed-form collapse-operator symbols, the
//! zero-order solution family, and the verification suite (Ehrenfest
//! identities, classical limit, linear no-go, dephasing, λ→∞ limit).

use std::sync::Arc;

use num_complex::Complex;
use thiserror::Error;

use crate::expr::{
    evaluate, is_zero_numeric, Bindings, EvalError, Expr, FuncEval, SampleSpec, ZeroCheck, HBAR,
};
use crate::star::{
    dissipator_adjoint, dissipator_state, moyal_star, series_residual, Branch, SeriesReport,
    StarConfig, StarError, P, X,
};

/// Reduced de Broglie wavelength variable.
pub const LAMBDA: &str = "lambda";
/// Friction rate variable (half the classical friction coefficient).
pub const GAMMA: &str = "gamma";
/// Mass variable (used by the dephasing checks).
pub const MASS: &str = "m";
/// Thermal energy variable (used by the dephasing checks).
pub const KT: &str = "kT";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Star(#[from] StarError),
}

/// Physical parameters of a run. The friction model itself is the T = 0
/// limit; `k_t` only enters the dephasing checks.
#[derive(Clone, Copy, Debug)]
pub struct PhysParams {
    pub hbar: f64,
    pub mass: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub k_t: f64,
}

impl PhysParams {
    pub fn new(hbar: f64, mass: f64, gamma: f64, lambda: f64, k_t: f64) -> Result<Self, ModelError> {
        let p = PhysParams { hbar, mass, gamma, lambda, k_t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_finite = [self.hbar, self.mass, self.gamma, self.lambda, self.k_t]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ModelError::InvalidParams("non-finite parameter".into()));
        }
        if self.hbar <= 0.0 {
            return Err(ModelError::InvalidParams(format!("hbar = {} must be > 0", self.hbar)));
        }
        if self.mass <= 0.0 {
            return Err(ModelError::InvalidParams(format!("mass = {} must be > 0", self.mass)));
        }
        if self.lambda <= 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "lambda = {} must be > 0",
                self.lambda
            )));
        }
        if self.gamma < 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "gamma = {} must be >= 0",
                self.gamma
            )));
        }
        if self.k_t < 0.0 {
            return Err(ModelError::InvalidParams(format!("kT = {} must be >= 0", self.k_t)));
        }
        Ok(())
    }

    /// Bindings with the numeric parameter values filled in.
    pub fn bindings(&self) -> Bindings<f64> {
        let mut b = Bindings::new();
        b.set_real(HBAR, self.hbar)
            .set_real(LAMBDA, self.lambda)
            .set_real(GAMMA, self.gamma)
            .set_real(MASS, self.mass)
            .set_real(KT, self.k_t);
        b
    }
}

/// The model symbols for one sign of the momentum, as expressions over
/// x, p (= |p|), ℏ and λ.
#[derive(Clone, Debug)]
pub struct SymbolSet {
    pub a: Expr,
    pub a_dag: Expr,
    pub alpha: Expr,
    pub beta: Expr,
    pub delta: Expr,
}

/// Closed-form symbols for σ ∈ {-1, 0, +1}. σ = 0 exists only to evaluate
/// the p = 0 lattice line, where sign(p) is defined as 0.
pub fn exact_symbol_set(sigma: i64) -> SymbolSet {
    assert!((-1..=1).contains(&sigma));
    let x = Expr::var(X);
    let p = Expr::var(P);
    let hb = Expr::var(HBAR);
    let lam = Expr::var(LAMBDA);
    let sig = Expr::int(sigma);
    let lp = lam.clone() * p.clone() + hb.clone();

    // A = i (2λp + ℏ) / (2 sqrt(λp + ℏ)) + (2x/λ) σ sqrt(λp + ℏ)
    let a = Expr::product(vec![
        Expr::ratio(1, 2) * Expr::i(),
        Expr::int(2) * lam.clone() * p.clone() + hb.clone(),
        Expr::pow(lp.clone(), num_rational::Rational64::new(-1, 2)),
    ]) + Expr::product(vec![
        Expr::int(2),
        x.clone(),
        lam.recip(),
        sig.clone(),
        Expr::sqrt(lp.clone()),
    ]);
    let a_dag = a.conjugate();

    // α = [4x²(λp+ℏ)² + pλ³(λp+4ℏ) + 5ℏ²λ²] / [4 (λp+ℏ)³]
    let alpha = Expr::product(vec![
        Expr::ratio(1, 4),
        Expr::sum(vec![
            Expr::product(vec![Expr::int(4), Expr::pow_int(x.clone(), 2), Expr::pow_int(lp.clone(), 2)]),
            Expr::product(vec![
                p.clone(),
                Expr::pow_int(lam.clone(), 3),
                lam.clone() * p.clone() + Expr::int(4) * hb.clone(),
            ]),
            Expr::product(vec![Expr::int(5), Expr::pow_int(hb.clone(), 2), Expr::pow_int(lam.clone(), 2)]),
        ]),
        Expr::pow_int(lp.clone(), -3),
    ]);

    // β = -4σx/λ
    let beta = Expr::product(vec![Expr::int(-4), sig, x, lam.recip()]);

    // δ = 4(λp + ℏ)/λ²
    let delta = Expr::product(vec![Expr::int(4), lp, Expr::pow_int(lam, -2)]);

    SymbolSet { a, a_dag, alpha, beta, delta }
}

/// The paper-facing bundle: exact symbols for one verification branch,
/// together with the parameters they will be evaluated at.
#[derive(Clone, Debug)]
pub struct FrictionSymbols {
    pub a: Expr,
    pub a_dag: Expr,
    pub alpha: Expr,
    pub beta: Expr,
    pub delta: Expr,
    pub branch: Branch,
    pub params: PhysParams,
}

pub fn build_exact_symbols(params: &PhysParams, branch: Branch) -> Result<FrictionSymbols, ModelError> {
    params.validate()?;
    let set = exact_symbol_set(branch.sign());
    Ok(FrictionSymbols {
        a: set.a,
        a_dag: set.a_dag,
        alpha: set.alpha,
        beta: set.beta,
        delta: set.delta,
        branch,
        params: *params,
    })
}

/// All three σ-branches of the exact symbols, for lattice evaluation where
/// the signed momentum selects the branch.
#[derive(Clone, Debug)]
pub struct SignedSymbols {
    pub plus: SymbolSet,
    pub zero: SymbolSet,
    pub minus: SymbolSet,
    pub params: PhysParams,
}

pub fn build_signed_symbols(params: &PhysParams) -> Result<SignedSymbols, ModelError> {
    params.validate()?;
    Ok(SignedSymbols {
        plus: exact_symbol_set(1),
        zero: exact_symbol_set(0),
        minus: exact_symbol_set(-1),
        params: *params,
    })
}

// ---------------------------------------------------------------------------
// Zero-order family
// ---------------------------------------------------------------------------

/// A₀ = sqrt(2p / G'(x)) (i + σ G(x)) for a monotonically increasing G.
pub fn build_zero_order(g: &Expr, branch: Branch) -> Expr {
    let gp = g.differentiate(X);
    Expr::product(vec![
        Expr::sqrt(Expr::product(vec![Expr::int(2), Expr::var(P), gp.recip()])),
        Expr::i() + branch.expr() * g.clone(),
    ])
}

/// Residuals of the two zero-order equations:
/// A₀* ∂pA₀ − ∂pA₀* A₀ = 0 and A₀* ∂xA₀ − ∂xA₀* A₀ = −4iσp.
#[derive(Clone, Debug)]
pub struct ZeroOrderReport {
    pub momentum_eq: ZeroCheck,
    pub coordinate_eq: ZeroCheck,
    pub pass: bool,
}

pub fn verify_zero_order_equations(
    a0: &Expr,
    branch: Branch,
    spec: &SampleSpec,
) -> Result<ZeroOrderReport, ModelError> {
    let a0c = a0.conjugate();
    let eq1 = &a0c * a0.differentiate(P) - a0c.differentiate(P) * a0;
    let eq2 = &a0c * a0.differentiate(X) - a0c.differentiate(X) * a0
        + Expr::product(vec![Expr::int(4), Expr::i(), branch.expr(), Expr::var(P)]);
    let base = Bindings::new();
    let momentum_eq = is_zero_numeric(&eq1, spec, &base)?;
    let coordinate_eq = is_zero_numeric(&eq2, spec, &base)?;
    let pass = momentum_eq.is_zero && coordinate_eq.is_zero;
    Ok(ZeroOrderReport { momentum_eq, coordinate_eq, pass })
}

// ---------------------------------------------------------------------------
// Ehrenfest identities
// ---------------------------------------------------------------------------

/// Per-identity series reports for the dissipator-side Ehrenfest checks.
#[derive(Clone, Debug)]
pub struct EhrenfestReport {
    pub branch: Branch,
    pub identities: Vec<(String, SeriesReport)>,
    pub pass: bool,
}

/// Default sampling plan for the symbolic suite: x ∈ [-5,5], p ∈ [0.1,5],
/// γ sampled, λ pinned.
pub fn ehrenfest_sample_spec(seed: u64, lambda: f64) -> SampleSpec {
    SampleSpec::new(seed)
        .var(X, -5.0, 5.0)
        .var(P, 0.1, 5.0)
        .var(GAMMA, 0.05, 1.0)
        .var(LAMBDA, lambda, lambda)
        .tolerances(1e-12, 1e-8)
}

/// Checks the five dissipator-side identities through order ℏ^n_max:
/// L†(x) = 0, L†(σp) = −2γσp, L†(x²) = γℏα,
/// L†(2σpx) = −4γσpx + γℏβ, L†(p²) = −4γp² + γℏδ.
pub fn verify_ehrenfest(
    sym: &FrictionSymbols,
    n_max: usize,
    spec: &SampleSpec,
) -> Result<EhrenfestReport, ModelError> {
    let cfg = StarConfig::new(n_max, sym.branch);
    let gamma = Expr::var(GAMMA);
    let x = Expr::var(X);
    let p = Expr::var(P);
    let hb = Expr::var(HBAR);
    let sig = sym.branch.expr();

    let observables: [(String, Expr, Expr); 5] = [
        ("L(x) = 0".into(), x.clone(), Expr::zero()),
        (
            "L(sp) = -2g sp".into(),
            sig.clone() * p.clone(),
            Expr::product(vec![Expr::int(-2), gamma.clone(), sig.clone(), p.clone()]),
        ),
        (
            "L(x^2) = g h alpha".into(),
            Expr::pow_int(x.clone(), 2),
            Expr::product(vec![gamma.clone(), hb.clone(), sym.alpha.clone()]),
        ),
        (
            "L(2spx) = -4g spx + g h beta".into(),
            Expr::product(vec![Expr::int(2), sig.clone(), p.clone(), x.clone()]),
            Expr::product(vec![Expr::int(-4), gamma.clone(), sig.clone(), p.clone(), x.clone()])
                + Expr::product(vec![gamma.clone(), hb.clone(), sym.beta.clone()]),
        ),
        (
            "L(p^2) = -4g p^2 + g h delta".into(),
            Expr::pow_int(p.clone(), 2),
            Expr::product(vec![Expr::int(-4), gamma.clone(), Expr::pow_int(p.clone(), 2)])
                + Expr::product(vec![gamma.clone(), hb.clone(), sym.delta.clone()]),
        ),
    ];

    let base = Bindings::new();
    let mut identities = Vec::with_capacity(5);
    for (name, obs, rhs) in observables {
        let lhs = dissipator_adjoint(&sym.a, &sym.a_dag, &obs, cfg, &gamma);
        let report = series_residual(&lhs, &rhs, n_max, spec, &base)?;
        identities.push((name, report));
    }
    let pass = identities.iter().all(|(_, r)| r.pass);
    Ok(EhrenfestReport { branch: sym.branch, identities, pass })
}

// ---------------------------------------------------------------------------
// Classical limit
// ---------------------------------------------------------------------------

/// n-th derivative of exp(-(v-c)²/(2s²)) via the Hermite recurrence.
fn gaussian_derivative(v: f64, c: f64, s: f64, n: usize) -> f64 {
    let t = (v - c) / (s * std::f64::consts::SQRT_2);
    let mut h_prev = 0.0f64;
    let mut h = 1.0f64;
    for k in 0..n {
        let next = 2.0 * t * h - 2.0 * k as f64 * h_prev;
        h_prev = h;
        h = next;
    }
    (-1.0 / (s * std::f64::consts::SQRT_2)).powi(n as i32) * h * (-t * t).exp()
}

/// Evaluator for a separable Gaussian test function W(x, p) with analytic
/// derivatives of any order.
pub fn gaussian_func_eval(x0: f64, p0: f64, sx: f64, sp: f64) -> FuncEval<f64> {
    Arc::new(move |args: &[Complex<f64>], orders: &[u32]| {
        let gx = gaussian_derivative(args[0].re, x0, sx, orders[0] as usize);
        let gp = gaussian_derivative(args[1].re, p0, sp, orders[1] as usize);
        Complex::new(gx * gp, 0.0)
    })
}

#[derive(Clone, Debug)]
pub struct ClassicalLimitReport {
    pub branch: Branch,
    pub check: ZeroCheck,
    pub pass: bool,
}

/// The ℏ⁰ coefficient of D[W] must equal 2γ(W + p ∂pW), the classical
/// friction term, for any test function W.
pub fn verify_classical_limit(
    sym: &FrictionSymbols,
    spec: &SampleSpec,
    w_eval: FuncEval<f64>,
) -> Result<ClassicalLimitReport, ModelError> {
    let w = Expr::func("W", &[X, P]);
    let cfg = StarConfig::new(2, sym.branch);
    let d = dissipator_state(&sym.a, &sym.a_dag, &w, cfg, &Expr::var(GAMMA));
    let c0 = crate::expr::hbar_series_coefficient(&d, 0);
    let expected = Expr::product(vec![
        Expr::int(2),
        Expr::var(GAMMA),
        w.clone() + Expr::var(P) * w.differentiate(P),
    ]);
    let mut base = Bindings::new();
    base.set_func("W", w_eval);
    let check = is_zero_numeric(&(c0 - expected), spec, &base)?;
    let pass = check.is_zero;
    Ok(ClassicalLimitReport { branch: sym.branch, check, pass })
}

// ---------------------------------------------------------------------------
// Linear no-go
// ---------------------------------------------------------------------------

/// For A = a x + b p, the order-ℏ⁰ conditions of the two defining equations
/// reduce to r1 = Im(a* b) (must vanish) and r2 = Im(a* b) − 2 (must
/// vanish). Both are computed through the star engine, not the closed
/// form. They cannot vanish together: max(|r1|, |r2|) ≥ 1.
pub fn verify_linear_no_go(a: Complex<f64>, b: Complex<f64>) -> Result<(f64, f64), ModelError> {
    let x = Expr::var(X);
    let p = Expr::var(P);
    let a_expr = Expr::complex_f64(a) * x + Expr::complex_f64(b) * p.clone();
    let a_conj = a_expr.conjugate();
    let cfg = StarConfig::new(2, Branch::Plus);

    let eq1 = moyal_star(&a_conj, &a_expr.differentiate(P), cfg)
        - moyal_star(&a_conj.differentiate(P), &a_expr, cfg);
    let eq2 = moyal_star(&a_conj, &a_expr.differentiate(X), cfg)
        - moyal_star(&a_conj.differentiate(X), &a_expr, cfg);

    let c1 = crate::expr::hbar_series_coefficient(&eq1, 0);
    let residual2 = crate::expr::hbar_series_coefficient(&eq2, 0)
        + Expr::product(vec![Expr::int(4), Expr::i(), p]);

    let mut b1 = Bindings::<f64>::new();
    b1.set_real(X, 1.0).set_real(P, 0.7);
    let z1 = evaluate(&c1, &b1)?;
    let mut b2 = Bindings::<f64>::new();
    b2.set_real(X, 0.3).set_real(P, 1.0);
    let z2 = evaluate(&residual2, &b2)?;

    // Both residuals are purely imaginary multiples of the evaluation
    // coordinate: 2i Im(a*b) x and (4 - 2 Im(a*b)) i p.
    let r1 = z1.im / 2.0;
    let r2 = -z2.im / 2.0;
    Ok((r1, r2))
}

// ---------------------------------------------------------------------------
// Dephasing
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DephasingReport {
    pub branch: Branch,
    pub cases: Vec<(String, SeriesReport)>,
    pub pass: bool,
}

/// With A = sqrt(4 m kT / ℏ) x, the dissipator injects momentum variance at
/// the exact rate 4mγkT and leaves x, x², σp and 2σpx untouched, at every
/// computed ℏ order.
pub fn verify_dephasing(branch: Branch, seed: u64) -> Result<DephasingReport, ModelError> {
    let x = Expr::var(X);
    let p = Expr::var(P);
    let sig = branch.expr();
    let c = Expr::product(vec![
        Expr::int(2),
        Expr::sqrt(Expr::var(MASS)),
        Expr::sqrt(Expr::var(KT)),
        Expr::pow(Expr::var(HBAR), num_rational::Rational64::new(-1, 2)),
    ]);
    let a = c * x.clone();
    let a_dag = a.conjugate();
    let cfg = StarConfig::new(4, branch);
    let gamma = Expr::var(GAMMA);

    let four_mgkt = Expr::product(vec![
        Expr::int(4),
        Expr::var(MASS),
        gamma.clone(),
        Expr::var(KT),
    ]);
    let cases_in: [(String, Expr, Expr); 5] = [
        ("L(p^2) = 4 m g kT".into(), Expr::pow_int(p.clone(), 2), four_mgkt),
        ("L(x) = 0".into(), x.clone(), Expr::zero()),
        ("L(x^2) = 0".into(), Expr::pow_int(x.clone(), 2), Expr::zero()),
        ("L(sp) = 0".into(), sig.clone() * p.clone(), Expr::zero()),
        (
            "L(2spx) = 0".into(),
            Expr::product(vec![Expr::int(2), sig, p, x]),
            Expr::zero(),
        ),
    ];

    let spec = SampleSpec::new(seed)
        .var(X, -5.0, 5.0)
        .var(P, 0.1, 5.0)
        .var(MASS, 0.2, 3.0)
        .var(KT, 0.2, 3.0)
        .var(GAMMA, 0.05, 1.5)
        .count(5)
        .tolerances(1e-10, 1e-12);
    let base = Bindings::new();

    let mut cases = Vec::with_capacity(5);
    for (name, obs, rhs) in cases_in {
        let lhs = dissipator_adjoint(&a, &a_dag, &obs, cfg, &gamma);
        assert!(
            !lhs.has_negative_power_of(HBAR),
            "dephasing dissipator kept an explicit 1/hbar"
        );
        let report = series_residual(&lhs, &rhs, cfg.order, &spec, &base)?;
        cases.push((name, report));
    }
    let pass = cases.iter().all(|(_, r)| r.pass);
    Ok(DephasingReport { branch, cases, pass })
}

// ---------------------------------------------------------------------------
// Limit identity
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LimitRow {
    pub lambda: f64,
    pub x: f64,
    pub p: f64,
    pub rel_diff: f64,
}

#[derive(Clone, Debug)]
pub struct LimitReport {
    pub branch: Branch,
    pub rows: Vec<LimitRow>,
    pub pass: bool,
}

/// lim_{λ→∞} A = lim_{ℏ→0} A: at fixed (x, p) the relative difference
/// between A(ℏ=1, λ) and A|ℏ→0 (λ) decreases monotonically along the λ
/// ladder and drops below 1e-3 by λ = 1e5. λ = 1 is the order-one baseline.
pub fn verify_limit_identity(branch: Branch) -> Result<LimitReport, ModelError> {
    let set = exact_symbol_set(branch.sign());
    let a_h0 = set.a.substitute(HBAR, &Expr::zero());
    let points = [(1.0, 1.0), (3.0, 0.5)];
    let ladder = [1.0, 1e2, 1e3, 1e4, 1e5];

    let mut rows = Vec::new();
    let mut pass = true;
    for &(px, pp) in &points {
        let mut prev = f64::INFINITY;
        for &lam in &ladder {
            let mut b = Bindings::<f64>::new();
            b.set_real(X, px)
                .set_real(P, pp)
                .set_real(LAMBDA, lam)
                .set_real(HBAR, 1.0);
            let full = evaluate(&set.a, &b)?;
            let limit = evaluate(&a_h0, &b)?;
            let rel = (full - limit).norm() / full.norm();
            if rel >= prev {
                pass = false;
            }
            prev = rel;
            rows.push(LimitRow { lambda: lam, x: px, p: pp, rel_diff: rel });
        }
        if prev >= 1e-3 {
            pass = false;
        }
    }
    Ok(LimitReport { branch, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PhysParams {
        PhysParams::new(1.0, 1.0, 1.0 / 12.0, 64.0, 0.0).unwrap()
    }

    #[test]
    fn lambda_must_be_positive() {
        assert!(PhysParams::new(1.0, 1.0, 0.1, 0.0, 0.0).is_err());
        assert!(PhysParams::new(1.0, 1.0, 0.1, -2.0, 0.0).is_err());
        assert!(build_exact_symbols(&PhysParams { lambda: -1.0, ..params() }, Branch::Plus).is_err());
    }

    #[test]
    fn alpha_beta_delta_reference_values() {
        let sym = build_exact_symbols(&params(), Branch::Plus).unwrap();
        let mut b = Bindings::<f64>::new();
        b.set_real(X, 0.0).set_real(P, 0.0).set_real(HBAR, 1.0).set_real(LAMBDA, 64.0);
        // alpha(0, 0) = 5 * 64^2 / 4 = 5120
        let alpha = evaluate(&sym.alpha, &b).unwrap();
        assert!((alpha.re - 5120.0).abs() < 1e-9 && alpha.im == 0.0);
        // delta(p=0) = 4 / 64^2 = 1/1024
        let delta = evaluate(&sym.delta, &b).unwrap();
        assert!((delta.re - 1.0 / 1024.0).abs() < 1e-18);
        // beta(x=16, sigma=+1) = -1
        b.set_real(X, 16.0);
        let beta = evaluate(&sym.beta, &b).unwrap();
        assert!((beta.re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn a_dag_is_pointwise_conjugate() {
        let sym = build_exact_symbols(&params(), Branch::Minus).unwrap();
        let spec = SampleSpec::new(3)
            .var(X, -5.0, 5.0)
            .var(P, 0.1, 5.0)
            .var(HBAR, 0.2, 1.5)
            .var(LAMBDA, 0.5, 64.0);
        let mut rng = 0u64;
        for _ in 0..10 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = |k: u64, lo: f64, hi: f64| lo + (hi - lo) * (((rng >> k) & 0xffff) as f64 / 65535.0);
            let mut b = Bindings::<f64>::new();
            b.set_real(X, u(0, -5.0, 5.0))
                .set_real(P, u(16, 0.1, 5.0))
                .set_real(HBAR, u(32, 0.2, 1.5))
                .set_real(LAMBDA, u(48, 0.5, 64.0));
            let a = evaluate(&sym.a, &b).unwrap();
            let ad = evaluate(&sym.a_dag, &b).unwrap();
            assert!((a.conj() - ad).norm() < 1e-12);
        }
        let _ = spec;
    }

    #[test]
    fn zero_order_reduces_to_exact_a_leading_term() {
        // G = 2x/λ gives A0 = sqrt(λp)(i + 2σx/λ), the ℏ⁰ part of A.
        for br in Branch::both() {
            let g = Expr::product(vec![Expr::int(2), Expr::var(X), Expr::var(LAMBDA).recip()]);
            let a0 = build_zero_order(&g, br);
            let set = exact_symbol_set(br.sign());
            let lead = crate::expr::hbar_series_coefficient(&set.a, 0);
            let spec = SampleSpec::new(5)
                .var(X, -5.0, 5.0)
                .var(P, 0.1, 5.0)
                .var(LAMBDA, 0.5, 64.0)
                .tolerances(1e-12, 1e-10);
            let chk = is_zero_numeric(&(a0 - lead), &spec, &Bindings::new()).unwrap();
            assert!(chk.is_zero, "branch {br}: {}", chk.max_abs);
        }
    }

    #[test]
    fn zero_order_equations_hold_for_general_g() {
        // G = x + x^3/3 has G' = 1 + x^2 > 0 everywhere.
        let x = Expr::var(X);
        let g = x.clone() + Expr::ratio(1, 3) * Expr::pow_int(x, 3);
        for br in Branch::both() {
            let a0 = build_zero_order(&g, br);
            let spec = SampleSpec::new(11)
                .var(X, -3.0, 3.0)
                .var(P, 0.1, 5.0)
                .tolerances(1e-12, 1e-10);
            let rep = verify_zero_order_equations(&a0, br, &spec).unwrap();
            assert!(rep.pass, "branch {br}: {:?} {:?}", rep.momentum_eq.max_abs, rep.coordinate_eq.max_abs);
        }
    }

    #[test]
    fn scaled_zero_order_breaks_coordinate_equation() {
        // A0 * 1.01 violates the -4iσp identity by about 2%.
        let g = Expr::product(vec![Expr::int(2), Expr::var(X), Expr::var(LAMBDA).recip()]);
        let a0 = Expr::from_f64(1.01) * build_zero_order(&g, Branch::Plus);
        let spec = SampleSpec::new(11)
            .var(X, -3.0, 3.0)
            .var(P, 0.5, 5.0)
            .var(LAMBDA, 2.0, 2.0)
            .tolerances(1e-12, 1e-10);
        let rep = verify_zero_order_equations(&a0, Branch::Plus, &spec).unwrap();
        assert!(rep.momentum_eq.is_zero, "first equation is scale-invariant");
        assert!(!rep.coordinate_eq.is_zero);
        // |1.01^2 - 1| * 4p at the worst point stays within a factor of the bound
        assert!(rep.coordinate_eq.max_abs > 0.01);
    }

    #[test]
    fn ehrenfest_low_order_smoke() {
        // Full N=6 both-branch suite lives in the acceptance tests; N=2 at
        // one λ keeps this unit test quick.
        let sym = build_exact_symbols(&params(), Branch::Plus).unwrap();
        let spec = ehrenfest_sample_spec(7, 1.0).count(8);
        let rep = verify_ehrenfest(&sym, 2, &spec).unwrap();
        for (name, r) in &rep.identities {
            assert!(r.pass, "{name}:\n{r}");
        }
    }

    #[test]
    fn classical_limit_matches_friction_term() {
        for br in Branch::both() {
            let sym = build_exact_symbols(&params(), br).unwrap();
            let spec = SampleSpec::new(19)
                .var(X, -5.0, 5.0)
                .var(P, 0.1, 5.0)
                .var(LAMBDA, 0.5, 8.0)
                .var(GAMMA, 0.05, 1.0)
                .tolerances(1e-12, 1e-10);
            let rep = verify_classical_limit(&sym, &spec, gaussian_func_eval(0.4, 2.1, 1.3, 0.8)).unwrap();
            assert!(rep.pass, "branch {br}: {}", rep.check.max_abs);
        }
    }

    #[test]
    fn classical_limit_detects_scaled_a() {
        // A scaled by sqrt(2) doubles the dissipator: the residual equals
        // the classical term itself.
        let mut sym = build_exact_symbols(&params(), Branch::Plus).unwrap();
        let s = Expr::sqrt(Expr::int(2));
        sym.a = s.clone() * sym.a;
        sym.a_dag = s * sym.a_dag;
        let spec = SampleSpec::new(19)
            .var(X, -2.0, 2.0)
            .var(P, 0.5, 3.0)
            .var(LAMBDA, 1.0, 4.0)
            .var(GAMMA, 0.2, 1.0)
            .tolerances(1e-12, 1e-10);
        let rep = verify_classical_limit(&sym, &spec, gaussian_func_eval(0.0, 1.5, 1.0, 1.0)).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn classical_limit_with_constant_w() {
        // W ≡ 1: ∂pW = 0, the classical term is exactly 2γ.
        let sym = build_exact_symbols(&params(), Branch::Plus).unwrap();
        let w_eval: FuncEval<f64> = Arc::new(|_args, orders: &[u32]| {
            if orders.iter().all(|&o| o == 0) {
                Complex::new(1.0, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let spec = SampleSpec::new(3)
            .var(X, -2.0, 2.0)
            .var(P, 0.5, 3.0)
            .var(LAMBDA, 2.0, 2.0)
            .var(GAMMA, 0.3, 0.3)
            .tolerances(1e-12, 1e-10);
        let rep = verify_classical_limit(&sym, &spec, w_eval).unwrap();
        assert!(rep.pass, "{}", rep.check.max_abs);
    }

    #[test]
    fn linear_no_go_reference_pairs() {
        let cases = [
            (Complex::new(1.0, 0.0), Complex::new(0.0, 1.0), (1.0, -1.0)),
            (Complex::new(1.0, 0.0), Complex::new(0.0, 2.0), (2.0, 0.0)),
            (Complex::new(1.0, 0.0), Complex::new(1.0, 0.0), (0.0, -2.0)),
        ];
        for (a, b, (e1, e2)) in cases {
            let (r1, r2) = verify_linear_no_go(a, b).unwrap();
            assert!((r1 - e1).abs() < 1e-12 && (r2 - e2).abs() < 1e-12, "({a}, {b}) -> ({r1}, {r2})");
        }
    }

    #[test]
    fn dephasing_identities_exact() {
        for br in Branch::both() {
            let rep = verify_dephasing(br, 5).unwrap();
            for (name, r) in &rep.cases {
                assert!(r.pass, "branch {br} {name}:\n{r}");
            }
        }
    }

    #[test]
    fn limit_identity_ladder() {
        for br in Branch::both() {
            let rep = verify_limit_identity(br).unwrap();
            assert!(rep.pass, "{:?}", rep.rows);
            let final_row = rep.rows.iter().find(|r| r.lambda == 1e5 && r.x == 1.0).unwrap();
            assert!(final_row.rel_diff < 1e-3);
            let baseline = rep.rows.iter().find(|r| r.lambda == 1.0 && r.x == 1.0).unwrap();
            assert!(baseline.rel_diff > 0.01, "baseline should be order-one-ish: {}", baseline.rel_diff);
        }
    }
}
