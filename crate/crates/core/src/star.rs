//! Truncated Moyal star products and the Lindblad dissipators built from
//! them, in branch form: within a branch the variable `p` stands for |p|,
//! the physical momentum is σ·p, and σ enters the star prefactor.
//!
//! The dissipators carry an overall 1/ℏ. Rather than placing an explicit
//! ℏ⁻¹ in the tree (which would wreck the ℏ → 0 substitution used for
//! series extraction), the triple-star bracket is assembled grade by grade
//! in the star prefactor power: the grade-0 part cancels identically
//! (pointwise products commute), and grade g picks up the factor ℏ^(g-1).

use std::collections::HashMap;

use thiserror::Error;

use crate::expr::{
    is_zero_numeric_batch, Bindings, EvalError, Expr, SampleSpec, ZeroCheck, HBAR,
};

/// Phase-space coordinate variable.
pub const X: &str = "x";
/// Branch momentum variable (|p| within a branch).
pub const P: &str = "p";

/// Sign of the physical momentum within a verification branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> i64 {
        match self {
            Branch::Plus => 1,
            Branch::Minus => -1,
        }
    }

    pub fn expr(self) -> Expr {
        Expr::int(self.sign())
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::Plus => "+",
            Branch::Minus => "-",
        }
    }

    pub fn both() -> [Branch; 2] {
        [Branch::Plus, Branch::Minus]
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sigma={}1", self.label())
    }
}

/// Truncation order and branch shared by all star products of one run.
#[derive(Clone, Copy, Debug)]
pub struct StarConfig {
    pub order: usize,
    pub branch: Branch,
}

impl StarConfig {
    pub fn new(order: usize, branch: Branch) -> Self {
        assert!(order <= 12, "star truncation order beyond supported range");
        StarConfig { order, branch }
    }
}

// ---------------------------------------------------------------------------
// Derivative tables
// ---------------------------------------------------------------------------

/// Lazily filled table of mixed partials ∂x^i ∂p^j of one expression.
struct DerivTable {
    entries: HashMap<(u32, u32), Expr>,
}

impl DerivTable {
    fn new(e: Expr) -> Self {
        let mut entries = HashMap::new();
        entries.insert((0, 0), e);
        DerivTable { entries }
    }

    fn get(&mut self, dx: u32, dp: u32) -> Expr {
        if let Some(e) = self.entries.get(&(dx, dp)) {
            return e.clone();
        }
        let e = if dx > 0 {
            self.get(dx - 1, dp).differentiate(X)
        } else {
            self.get(dx, dp - 1).differentiate(P)
        };
        self.entries.insert((dx, dp), e.clone());
        e
    }
}

fn binomial(n: u32, k: u32) -> i64 {
    let mut acc: i64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i64 / (i + 1) as i64;
    }
    acc
}

/// Prefactor of the (n, k) Moyal term: (iσ/2)^n / n! · C(n,k) · (-1)^k,
/// as an exact constant (the explicit ℏ^n is attached by the caller).
fn moyal_prefactor(n: u32, k: u32, sigma: i64) -> Expr {
    let mut denom: i64 = 1;
    for i in 1..=n as i64 {
        denom *= 2 * i; // 2^n n!
    }
    let mut num = binomial(n, k);
    if k % 2 == 1 {
        num = -num;
    }
    if sigma < 0 && n % 2 == 1 {
        num = -num;
    }
    let c = Expr::ratio(num, denom);
    // i^n
    match n % 4 {
        0 => c,
        1 => Expr::i() * c,
        2 => -c,
        _ => -(Expr::i() * c),
    }
}

/// Grade-n coefficients (without the ℏ^n factor) of the truncated star
/// product built from two derivative tables.
fn star_grades_from(
    ta: &mut DerivTable,
    tb: &mut DerivTable,
    order: usize,
    branch: Branch,
) -> Vec<Expr> {
    let sigma = branch.sign();
    let mut grades = Vec::with_capacity(order + 1);
    for n in 0..=order as u32 {
        let mut terms = Vec::with_capacity(n as usize + 1);
        for k in 0..=n {
            let da = ta.get(n - k, k); // ∂p^k ∂x^(n-k) A
            if da.is_literal_zero() {
                continue;
            }
            let db = tb.get(k, n - k); // ∂x^k ∂p^(n-k) B
            if db.is_literal_zero() {
                continue;
            }
            terms.push(Expr::product(vec![moyal_prefactor(n, k, sigma), da, db]));
        }
        grades.push(Expr::sum(terms));
    }
    grades
}

/// Grade decomposition of `a ⋆ b` in the star-prefactor power of ℏ.
pub fn moyal_star_graded(a: &Expr, b: &Expr, order: usize, branch: Branch) -> Vec<Expr> {
    let mut ta = DerivTable::new(a.clone());
    let mut tb = DerivTable::new(b.clone());
    star_grades_from(&mut ta, &mut tb, order, branch)
}

/// Truncated Moyal product
/// Σ_{n=0}^{N} (iσℏ/2)^n/n! Σ_k C(n,k)(-1)^k (∂p^k∂x^{n-k}A)(∂x^k∂p^{n-k}B).
pub fn moyal_star(a: &Expr, b: &Expr, cfg: StarConfig) -> Expr {
    let grades = moyal_star_graded(a, b, cfg.order, cfg.branch);
    Expr::sum(
        grades
            .into_iter()
            .enumerate()
            .map(|(n, g)| attach_hbar_power(n as i64, g))
            .collect(),
    )
}

/// Multiplies every top-level additive term by ℏ^n. Distributing (rather
/// than wrapping the whole sum) lets explicit ℏ powers inside the terms
/// merge with the prefactor, which keeps trees free of spurious ℏ⁻¹.
fn attach_hbar_power(n: i64, e: Expr) -> Expr {
    if n == 0 {
        return e;
    }
    let h = Expr::pow_int(Expr::var(HBAR), n);
    Expr::sum(
        e.sum_terms()
            .into_iter()
            .map(|t| h.clone() * t)
            .collect(),
    )
}

/// Grades of `x ⋆ (Σ_k ℏ^k ys[k])`, truncated at total grade `order`.
fn star_graded_left(x: &Expr, ys: &[Expr], order: usize, branch: Branch) -> Vec<Expr> {
    let mut buckets: Vec<Vec<Expr>> = vec![Vec::new(); order + 1];
    let mut tx = DerivTable::new(x.clone());
    for (k, y) in ys.iter().enumerate().take(order + 1) {
        if y.is_literal_zero() {
            continue;
        }
        let mut ty = DerivTable::new(y.clone());
        let grades = star_grades_from(&mut tx, &mut ty, order - k, branch);
        for (l, g) in grades.into_iter().enumerate() {
            buckets[k + l].push(g);
        }
    }
    buckets.into_iter().map(Expr::sum).collect()
}

/// Grades of `(Σ_k ℏ^k xs[k]) ⋆ y`, truncated at total grade `order`.
fn star_graded_right(xs: &[Expr], y: &Expr, order: usize, branch: Branch) -> Vec<Expr> {
    let mut buckets: Vec<Vec<Expr>> = vec![Vec::new(); order + 1];
    let mut ty = DerivTable::new(y.clone());
    for (k, x) in xs.iter().enumerate().take(order + 1) {
        if x.is_literal_zero() {
            continue;
        }
        let mut tx = DerivTable::new(x.clone());
        let grades = star_grades_from(&mut tx, &mut ty, order - k, branch);
        for (l, g) in grades.into_iter().enumerate() {
            buckets[k + l].push(g);
        }
    }
    buckets.into_iter().map(Expr::sum).collect()
}

/// Assembles γ/ℏ · Σ_g ℏ^g bracket_g with the grade shift applied:
/// grade 0 must cancel identically and grade g contributes ℏ^(g-1).
fn assemble_dissipator(
    t1: Vec<Expr>,
    t2: Vec<Expr>,
    t3: Vec<Expr>,
    gamma: &Expr,
    order: usize,
) -> Expr {
    let half = Expr::ratio(-1, 2);
    let mut out = Vec::new();
    for g in 0..=order {
        let bracket = Expr::sum(vec![
            t1[g].clone(),
            half.clone() * &t2[g],
            half.clone() * &t3[g],
        ]);
        if g == 0 {
            assert!(
                bracket.is_literal_zero(),
                "grade-0 dissipator bracket failed to cancel: {bracket}"
            );
            continue;
        }
        // γ and ℏ^(g-1) are distributed into each term: the result stays a
        // flat sum, so term-relative zero tests see the cancelling parts,
        // and explicit ℏ powers inside coefficients merge with the shift.
        let h = Expr::pow_int(Expr::var(HBAR), g as i64 - 1);
        for t in bracket.sum_terms() {
            out.push(Expr::product(vec![gamma.clone(), h.clone(), t]));
        }
    }
    Expr::sum(out)
}

/// Adjoint (observable-side) dissipator
/// (γ/ℏ)[A† ⋆ (O ⋆ A) − ½ (O ⋆ A†) ⋆ A − ½ A† ⋆ (A ⋆ O)].
///
/// Output coefficients of order ℏⁿ come from star terms of order n+1, so the
/// internal truncation runs one order above `cfg.order`: ℏ-series
/// coefficients of the result are exact through `cfg.order`.
pub fn dissipator_adjoint(
    a: &Expr,
    a_dag: &Expr,
    o: &Expr,
    cfg: StarConfig,
    gamma: &Expr,
) -> Expr {
    let m = cfg.order + 1;
    let br = cfg.branch;
    let t1 = star_graded_left(a_dag, &moyal_star_graded(o, a, m, br), m, br);
    let t2 = star_graded_right(&moyal_star_graded(o, a_dag, m, br), a, m, br);
    let t3 = star_graded_left(a_dag, &moyal_star_graded(a, o, m, br), m, br);
    assemble_dissipator(t1, t2, t3, gamma, m)
}

/// State-side dissipator acting on a Wigner-function symbol
/// (γ/ℏ)[A ⋆ W ⋆ A† − ½ W ⋆ A† ⋆ A − ½ A† ⋆ A ⋆ W].
pub fn dissipator_state(
    a: &Expr,
    a_dag: &Expr,
    w: &Expr,
    cfg: StarConfig,
    gamma: &Expr,
) -> Expr {
    let m = cfg.order + 1;
    let br = cfg.branch;
    let t1 = star_graded_left(a, &moyal_star_graded(w, a_dag, m, br), m, br);
    let t2 = star_graded_left(w, &moyal_star_graded(a_dag, a, m, br), m, br);
    let t3 = star_graded_left(a_dag, &moyal_star_graded(a, w, m, br), m, br);
    assemble_dissipator(t1, t2, t3, gamma, m)
}

// ---------------------------------------------------------------------------
// Series residual checking
// ---------------------------------------------------------------------------

/// Per-order outcome of a series-residual check.
#[derive(Clone, Debug)]
pub struct OrderCheck {
    pub order: usize,
    pub check: ZeroCheck,
}

/// Residuals of `e - expected`, order by order in ℏ.
#[derive(Clone, Debug)]
pub struct SeriesReport {
    pub orders: Vec<OrderCheck>,
    pub pass: bool,
}

impl SeriesReport {
    pub fn max_abs(&self) -> f64 {
        self.orders.iter().map(|o| o.check.max_abs).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for SeriesReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for oc in &self.orders {
            writeln!(
                f,
                "    order {:>2}: max residual {:>12.3e}  scale {:>12.3e}  {}",
                oc.order,
                oc.check.max_abs,
                oc.check.worst_scale,
                if oc.check.is_zero { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StarError {
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Extracts ℏ-coefficients 0..=n_max of `e - expected` and tests each
/// against zero at the sampled points. All coefficient trees are evaluated
/// with a shared memo per point, so common star fragments are computed once.
pub fn series_residual(
    e: &Expr,
    expected: &Expr,
    n_max: usize,
    spec: &SampleSpec,
    base: &Bindings<f64>,
) -> Result<SeriesReport, StarError> {
    let coeffs = series_coefficients(&(e - expected), n_max);
    let checks = is_zero_numeric_batch(&coeffs, spec, base)?;
    let orders: Vec<OrderCheck> = checks
        .into_iter()
        .enumerate()
        .map(|(order, check)| OrderCheck { order, check })
        .collect();
    let pass = orders.iter().all(|o| o.check.is_zero);
    Ok(SeriesReport { orders, pass })
}

/// ℏ-series coefficients 0..=n_max of an expression, reusing one
/// differentiation chain.
pub fn series_coefficients(e: &Expr, n_max: usize) -> Vec<Expr> {
    let mut coeffs = Vec::with_capacity(n_max + 1);
    let mut d = e.clone();
    for n in 0..=n_max {
        let at_zero = d.substitute(HBAR, &Expr::zero());
        let c = if n >= 2 {
            let f = crate::expr::factorial_ratio(n);
            Expr::ratio(*f.numer(), *f.denom()) * at_zero
        } else {
            at_zero
        };
        coeffs.push(c);
        if n < n_max {
            d = d.differentiate(HBAR);
        }
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::hbar_series_coefficient;

    fn x() -> Expr {
        Expr::var(X)
    }
    fn p() -> Expr {
        Expr::var(P)
    }
    fn hb() -> Expr {
        Expr::var(HBAR)
    }

    #[test]
    fn x_star_p_gains_half_commutator() {
        for br in Branch::both() {
            let cfg = StarConfig::new(4, br);
            let s = moyal_star(&x(), &p(), cfg);
            let expected = x() * p() + Expr::ratio(1, 2) * Expr::i() * br.expr() * hb();
            assert_eq!(s, expected, "branch {br}");
        }
    }

    #[test]
    fn star_with_one_is_identity() {
        let a = Expr::sqrt(Expr::var("lambda") * p() + hb()) + Expr::i() * x();
        let cfg = StarConfig::new(6, Branch::Plus);
        assert_eq!(moyal_star(&a, &Expr::one(), cfg), a);
        assert_eq!(moyal_star(&Expr::one(), &a, cfg), a);
    }

    #[test]
    fn canonical_commutator_image() {
        for br in Branch::both() {
            let cfg = StarConfig::new(3, br);
            let comm = moyal_star(&x(), &p(), cfg) - moyal_star(&p(), &x(), cfg);
            let expected = Expr::i() * br.expr() * hb();
            assert_eq!(comm, expected);
        }
    }

    #[test]
    fn star_reduces_to_product_at_order_zero() {
        let a = x() * p();
        let b = p() + Expr::int(3);
        let cfg = StarConfig::new(0, Branch::Plus);
        assert_eq!(moyal_star(&a, &b, cfg), a * b);
    }

    #[test]
    fn first_order_term_is_poisson_bracket() {
        // ℏ¹ coefficient of A⋆B - B⋆A = iσ(∂xA ∂pB - ∂pA ∂xB)
        let a = Expr::pow_int(x(), 2) * p();
        let b = x() * Expr::pow_int(p(), 3) + x();
        for br in Branch::both() {
            let cfg = StarConfig::new(4, br);
            let comm = moyal_star(&a, &b, cfg) - moyal_star(&b, &a, cfg);
            let c1 = hbar_series_coefficient(&comm, 1);
            let poisson = Expr::i()
                * br.expr()
                * (a.differentiate(X) * b.differentiate(P)
                    - a.differentiate(P) * b.differentiate(X));
            let spec = SampleSpec::new(11).var(X, -3.0, 3.0).var(P, 0.1, 4.0);
            let chk =
                crate::expr::is_zero_numeric(&(c1 - poisson), &spec, &Bindings::new()).unwrap();
            assert!(chk.is_zero, "branch {br}: {}", chk.max_abs);
        }
    }

    #[test]
    fn associativity_up_to_truncation() {
        // Degree <= 3 polynomials: all star terms are exact at N=6, so the
        // associator coefficients vanish through the truncation order.
        let a = Expr::pow_int(x(), 2) * p() + x();
        let b = Expr::pow_int(p(), 2) + x() * p();
        let c = Expr::pow_int(x(), 3) + p();
        let cfg = StarConfig::new(6, Branch::Plus);
        let left = moyal_star(&moyal_star(&a, &b, cfg), &c, cfg);
        let right = moyal_star(&a, &moyal_star(&b, &c, cfg), cfg);
        let spec = SampleSpec::new(5).var(X, -2.0, 2.0).var(P, 0.1, 3.0);
        let report = series_residual(&left, &right, 6, &spec, &Bindings::new()).unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn bilinearity_at_random_points() {
        let a1 = Expr::pow_int(x(), 2);
        let a2 = Expr::sqrt(p());
        let b = x() * p();
        let cfg = StarConfig::new(3, Branch::Minus);
        let lhs = moyal_star(&(Expr::int(2) * &a1 + Expr::int(5) * &a2), &b, cfg);
        let rhs =
            Expr::int(2) * moyal_star(&a1, &b, cfg) + Expr::int(5) * moyal_star(&a2, &b, cfg);
        let spec = SampleSpec::new(9)
            .var(X, -3.0, 3.0)
            .var(P, 0.1, 4.0)
            .var(HBAR, 0.1, 1.5);
        let chk = crate::expr::is_zero_numeric(&(lhs - rhs), &spec, &Bindings::new()).unwrap();
        assert!(chk.is_zero, "{}", chk.max_abs);
    }

    #[test]
    fn dissipator_adjoint_annihilates_identity() {
        // O = 1: trace preservation in dual form, at every order.
        let a = Expr::i() * Expr::sqrt(p()) + x() * p();
        let a_dag = a.conjugate();
        let cfg = StarConfig::new(6, Branch::Plus);
        let d = dissipator_adjoint(&a, &a_dag, &Expr::one(), cfg, &Expr::var("gamma"));
        assert!(d.is_literal_zero(), "{d}");
    }

    #[test]
    fn real_a_annihilates_functions_of_x() {
        // A real and a function of x only: dissipator of x-observables is 0.
        let a = x();
        let cfg = StarConfig::new(6, Branch::Plus);
        for o in [x(), Expr::pow_int(x(), 2)] {
            let d = dissipator_adjoint(&a, &a, &o, cfg, &Expr::var("gamma"));
            let spec = SampleSpec::new(3)
                .var(X, -2.0, 2.0)
                .var(P, 0.1, 3.0)
                .var("gamma", 0.1, 1.0)
                .var(HBAR, 0.2, 1.0);
            let chk = crate::expr::is_zero_numeric(&d, &spec, &Bindings::new()).unwrap();
            assert!(chk.is_zero, "O={o}: {}", chk.max_abs);
        }
    }

    #[test]
    fn dephasing_injects_momentum_variance() {
        // A = sqrt(4 m kT / hbar) x applied to p^2 gives exactly 4 m γ kT.
        let c = Expr::product(vec![
            Expr::int(2),
            Expr::sqrt(Expr::var("m")),
            Expr::sqrt(Expr::var("kT")),
            Expr::pow(Expr::var(HBAR), num_rational::Rational64::new(-1, 2)),
        ]);
        let a = c * x();
        let cfg = StarConfig::new(4, Branch::Plus);
        let d = dissipator_adjoint(
            &a,
            &a.conjugate(),
            &Expr::pow_int(p(), 2),
            cfg,
            &Expr::var("gamma"),
        );
        let expected = Expr::product(vec![
            Expr::int(4),
            Expr::var("m"),
            Expr::var("gamma"),
            Expr::var("kT"),
        ]);
        // No ℏ⁻¹ may survive the grade shift.
        assert!(!d.has_negative_power_of(HBAR), "{d}");
        let spec = SampleSpec::new(17)
            .var(X, -3.0, 3.0)
            .var(P, 0.1, 4.0)
            .var("m", 0.3, 2.0)
            .var("kT", 0.3, 2.0)
            .var("gamma", 0.1, 1.0)
            .var(HBAR, 0.3, 1.5);
        let chk = crate::expr::is_zero_numeric(&(d - expected), &spec, &Bindings::new()).unwrap();
        assert!(chk.is_zero, "{}", chk.max_abs);
    }

    #[test]
    fn zero_gamma_kills_dissipator() {
        let a = Expr::i() * Expr::sqrt(p()) + x();
        let cfg = StarConfig::new(3, Branch::Plus);
        let d = dissipator_adjoint(&a, &a.conjugate(), &x(), cfg, &Expr::zero());
        assert!(d.is_literal_zero());
    }

    #[test]
    fn state_dissipator_of_real_a_has_no_classical_drift() {
        // A real => the ℏ⁰ coefficient of D[W] vanishes.
        let a = x();
        let w = Expr::func("W", &[X, P]);
        let cfg = StarConfig::new(2, Branch::Plus);
        let d = dissipator_state(&a, &a, &w, cfg, &Expr::var("gamma"));
        let c0 = hbar_series_coefficient(&d, 0);
        assert!(c0.is_literal_zero(), "{c0}");
    }

    #[test]
    fn planted_defect_fails_exactly_at_its_order() {
        let e = x() * p();
        let defect = Expr::pow_int(hb(), 3) * x();
        let spec = SampleSpec::new(23).var(X, 1.0, 2.0).var(P, 1.0, 2.0);
        let report = series_residual(&(&e + &defect), &e, 5, &spec, &Bindings::new()).unwrap();
        assert!(!report.pass);
        for oc in &report.orders {
            assert_eq!(
                oc.check.is_zero,
                oc.order != 3,
                "order {} unexpected: {}",
                oc.order,
                oc.check.max_abs
            );
        }
    }

    #[test]
    fn series_residual_of_equal_expressions_passes() {
        let e = Expr::sqrt(Expr::var("lambda") * p() + hb()) * x();
        let spec = SampleSpec::new(2)
            .var(X, -2.0, 2.0)
            .var(P, 0.1, 3.0)
            .var("lambda", 0.5, 4.0);
        let report = series_residual(&e, &e.clone(), 6, &spec, &Bindings::new()).unwrap();
        assert!(report.pass);
        assert!(report.max_abs() <= 1e-12);
    }
}
