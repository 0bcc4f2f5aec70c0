//! Periodic coordinate grid, Weyl quantization of phase-space symbols into
//! dense operator matrices, and the observable suite.
//!
//! Conventions: states are plain ℓ² vectors (quadrature weights are folded
//! into the matrices), so operator composition is ordinary matrix product
//! and Tr(ρM) is the expectation value.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::expr::{evaluate, Bindings, EvalError, Expr};
use crate::model::{PhysParams, SignedSymbols, SymbolSet, GAMMA, KT, LAMBDA, MASS};
use crate::star::{P, X};
use crate::CMat;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("symbol evaluation failed at (x={x}, p={p}): {source}")]
    SymbolEvaluation {
        x: f64,
        p: f64,
        #[source]
        source: EvalError,
    },
}

/// Periodic coordinate lattice with the matching momentum lattice.
#[derive(Clone, Copy, Debug)]
pub struct Grid {
    n: usize,
    x_min: f64,
    x_max: f64,
    hbar: f64,
}

impl Grid {
    pub fn new(n: usize, x_min: f64, x_max: f64, hbar: f64) -> Result<Self, GridError> {
        if !n.is_power_of_two() || n < 2 {
            return Err(GridError::InvalidGrid(format!("n = {n} must be a power of two >= 2")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(GridError::InvalidGrid(format!(
                "domain [{x_min}, {x_max}] is not a finite interval"
            )));
        }
        if !(hbar > 0.0) {
            return Err(GridError::InvalidGrid(format!("hbar = {hbar} must be > 0")));
        }
        Ok(Grid { n, x_min, x_max, hbar })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }
    pub fn dp(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.hbar / self.length()
    }
    /// Largest resolvable momentum πℏn/L.
    pub fn p_max(&self) -> f64 {
        self.dp() * (self.n / 2) as f64
    }
    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }
    /// Momentum of FFT bin m (m < n/2 positive, m >= n/2 wraps negative).
    pub fn p_fft(&self, m: usize) -> f64 {
        let k = if m < self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        };
        self.dp() * k as f64
    }
    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }
}

// ---------------------------------------------------------------------------
// Symbol evaluators
// ---------------------------------------------------------------------------

type SymbolFn = Box<dyn Fn(f64, f64) -> Result<Complex64, EvalError> + Send + Sync>;

/// Callable phase-space symbol f(x, signed p), total on the lattice.
pub struct SymbolEvaluator {
    f: SymbolFn,
}

impl SymbolEvaluator {
    pub fn from_fn(f: impl Fn(f64, f64) -> Complex64 + Send + Sync + 'static) -> Self {
        SymbolEvaluator { f: Box::new(move |x, p| Ok(f(x, p))) }
    }

    /// Bridges branch-form expressions (p meaning |p|, σ = sign p, with
    /// sign(0) := 0) to the signed momentum lattice.
    pub fn from_branches(
        plus: Expr,
        zero: Expr,
        minus: Expr,
        params: &PhysParams,
    ) -> Self {
        let base = params.bindings();
        let f = move |x: f64, p: f64| -> Result<Complex64, EvalError> {
            let (expr, abs_p) = if p > 0.0 {
                (&plus, p)
            } else if p < 0.0 {
                (&minus, -p)
            } else {
                (&zero, 0.0)
            };
            let mut b = base.clone();
            b.set_real(X, x).set_real(P, abs_p);
            evaluate(expr, &b)
        };
        SymbolEvaluator { f: Box::new(f) }
    }

    pub fn eval(&self, x: f64, p: f64) -> Result<Complex64, EvalError> {
        (self.f)(x, p)
    }
}

// ---------------------------------------------------------------------------
// Weyl quantization
// ---------------------------------------------------------------------------

/// Weyl quantization of a phase-space symbol on the periodic lattice:
///
///   M_jk = (Δp Δx / 2πℏ) Σ_m exp(i p_m (x_j − x_k)/ℏ) f((x_j+x_k)/2, p_m)
///
/// evaluated with one inverse FFT per anti-diagonal (2n−1 FFTs of length n).
pub fn weyl_quantize(f: &SymbolEvaluator, g: &Grid) -> Result<CMat, GridError> {
    let n = g.n();
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);

    // h_s[d] = Σ_m f(x_min + s Δx/2, p_m) e^{2πi m d / n}
    let mut rows: Vec<Vec<Complex64>> = Vec::with_capacity(2 * n - 1);
    for s in 0..(2 * n - 1) {
        let xs = g.x_min() + s as f64 * g.dx() / 2.0;
        let mut buf: Vec<Complex64> = Vec::with_capacity(n);
        for m in 0..n {
            let p = g.p_fft(m);
            let v = f
                .eval(xs, p)
                .map_err(|source| GridError::SymbolEvaluation { x: xs, p, source })?;
            buf.push(v);
        }
        ifft.process(&mut buf);
        rows.push(buf);
    }

    let inv_n = 1.0 / n as f64;
    let mut m = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        for k in 0..n {
            let d = (j + n - k) % n;
            m[[j, k]] = rows[j + k][d] * inv_n;
        }
    }
    Ok(m)
}

/// Frobenius-relative deviation from Hermiticity, ‖M − M†‖ / max(1, ‖M‖).
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let n = m.nrows();
    for j in 0..n {
        for k in 0..n {
            let d = m[[j, k]] - m[[k, j]].conj();
            num += d.norm_sqr();
            den += m[[j, k]].norm_sqr();
        }
    }
    (num / den.max(1.0)).sqrt()
}

/// Hermitian conjugate.
pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

/// Tr(Mρ) split into value and imaginary-part diagnostic.
///
/// For a Hermitian observable on a physical state the imaginary part is
/// numerical noise; more than ~1e-6 of it signals a broken state or
/// operator, which the caller should treat as an error.
pub fn expectation(rho: &CMat, m: &CMat) -> (f64, f64) {
    let n = rho.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        for k in 0..n {
            acc += m[[j, k]] * rho[[k, j]];
        }
    }
    (acc.re, acc.im.abs())
}

// ---------------------------------------------------------------------------
// Potentials and the Hamiltonian
// ---------------------------------------------------------------------------

/// External potential U(x).
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Free,
    Harmonic { omega: f64 },
    /// Σ_k coeffs[k] x^k
    Polynomial { coeffs: Vec<f64> },
}

impl Potential {
    pub fn u(&self, x: f64, mass: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => 0.5 * mass * omega * omega * x * x,
            Potential::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
        }
    }

    pub fn u_prime(&self, x: f64, mass: f64) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => mass * omega * omega * x,
            Potential::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * x + k as f64 * c;
                }
                acc
            }
        }
    }
}

/// Ĥ = p̂²/2m + U(x̂): spectral kinetic part plus diagonal potential.
pub fn hamiltonian(g: &Grid, params: &PhysParams, pot: &Potential) -> Result<CMat, GridError> {
    let mass = params.mass;
    let kinetic_symbol = SymbolEvaluator::from_fn(move |_x, p| Complex64::new(p * p / (2.0 * mass), 0.0));
    let mut h = weyl_quantize(&kinetic_symbol, g)?;
    for j in 0..g.n() {
        h[[j, j]] += Complex64::new(pot.u(g.x(j), params.mass), 0.0);
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Observable suite
// ---------------------------------------------------------------------------

/// Every observable the Ehrenfest relations involve, as Hermitian matrices:
/// x, p, x², px+xp (symbol 2xp), p², |p|, the friction corrections α, β, δ,
/// and the potential combinations U′, xU′, pU′+U′p (symbol 2pU′).
pub struct ObservableSuite {
    pub x: CMat,
    pub p: CMat,
    pub x2: CMat,
    pub xp_sym: CMat,
    pub p2: CMat,
    pub abs_p: CMat,
    pub alpha: CMat,
    pub beta: CMat,
    pub delta: CMat,
    pub uprime: CMat,
    pub x_uprime: CMat,
    pub p_uprime_sym: CMat,
}

impl ObservableSuite {
    pub fn names_and_matrices(&self) -> [(&'static str, &CMat); 12] {
        [
            ("x", &self.x),
            ("p", &self.p),
            ("x2", &self.x2),
            ("xp_sym", &self.xp_sym),
            ("p2", &self.p2),
            ("abs_p", &self.abs_p),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("delta", &self.delta),
            ("uprime", &self.uprime),
            ("x_uprime", &self.x_uprime),
            ("p_uprime_sym", &self.p_uprime_sym),
        ]
    }
}

fn branch_evaluator(
    pick: impl Fn(&SymbolSet) -> &Expr,
    sym: &SignedSymbols,
) -> SymbolEvaluator {
    SymbolEvaluator::from_branches(
        pick(&sym.plus).clone(),
        pick(&sym.zero).clone(),
        pick(&sym.minus).clone(),
        &sym.params,
    )
}

/// Quantizes the full observable set. Every matrix is checked Hermitian to
/// 1e-10 (all symbols are real).
pub fn observable_suite(
    g: &Grid,
    sym: &SignedSymbols,
    pot: &Potential,
) -> Result<ObservableSuite, GridError> {
    let mass = sym.params.mass;
    let pot_u = pot.clone();
    let pot_xu = pot.clone();
    let pot_pu = pot.clone();
    let suite = ObservableSuite {
        x: weyl_quantize(&SymbolEvaluator::from_fn(|x, _| Complex64::new(x, 0.0)), g)?,
        p: weyl_quantize(&SymbolEvaluator::from_fn(|_, p| Complex64::new(p, 0.0)), g)?,
        x2: weyl_quantize(&SymbolEvaluator::from_fn(|x, _| Complex64::new(x * x, 0.0)), g)?,
        xp_sym: weyl_quantize(&SymbolEvaluator::from_fn(|x, p| Complex64::new(2.0 * x * p, 0.0)), g)?,
        p2: weyl_quantize(&SymbolEvaluator::from_fn(|_, p| Complex64::new(p * p, 0.0)), g)?,
        abs_p: weyl_quantize(&SymbolEvaluator::from_fn(|_, p| Complex64::new(p.abs(), 0.0)), g)?,
        alpha: weyl_quantize(&branch_evaluator(|s| &s.alpha, sym), g)?,
        beta: weyl_quantize(&branch_evaluator(|s| &s.beta, sym), g)?,
        delta: weyl_quantize(&branch_evaluator(|s| &s.delta, sym), g)?,
        uprime: weyl_quantize(
            &SymbolEvaluator::from_fn(move |x, _| Complex64::new(pot_u.u_prime(x, mass), 0.0)),
            g,
        )?,
        x_uprime: weyl_quantize(
            &SymbolEvaluator::from_fn(move |x, _| Complex64::new(x * pot_xu.u_prime(x, mass), 0.0)),
            g,
        )?,
        p_uprime_sym: weyl_quantize(
            &SymbolEvaluator::from_fn(move |x, p| {
                Complex64::new(2.0 * p * pot_pu.u_prime(x, mass), 0.0)
            }),
            g,
        )?,
    };
    for (name, m) in suite.names_and_matrices() {
        let defect = hermiticity_defect(m);
        if defect > 1e-10 {
            return Err(GridError::InvalidGrid(format!(
                "observable {name} not Hermitian: defect {defect:.3e}"
            )));
        }
    }
    Ok(suite)
}

/// Collapse-operator matrix Â from the branch-form symbols.
pub fn friction_operator(g: &Grid, sym: &SignedSymbols) -> Result<CMat, GridError> {
    weyl_quantize(&branch_evaluator(|s| &s.a, sym), g)
}

/// Smallest eigenvalue of a Hermitian matrix (eigen-audit helper).
pub fn min_eigenvalue(m: &CMat) -> f64 {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::<Complex64>::from_fn(n, n, |i, j| m[[i, j]]);
    let ev = dm.symmetric_eigenvalues();
    ev.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// All eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::<Complex64>::from_fn(n, n, |i, j| m[[i, j]]);
    let mut ev: Vec<f64> = dm.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

// Re-exported so engine code can bind symbol variables without reaching
// into the model module for the names.
pub(crate) fn symbol_base_bindings(params: &PhysParams) -> Bindings<f64> {
    let mut b = Bindings::new();
    b.set_real(crate::expr::HBAR, params.hbar)
        .set_real(LAMBDA, params.lambda)
        .set_real(GAMMA, params.gamma)
        .set_real(MASS, params.mass)
        .set_real(KT, params.k_t);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_signed_symbols;

    fn grid64() -> Grid {
        Grid::new(64, -10.0, 10.0, 1.0).unwrap()
    }

    fn params() -> PhysParams {
        PhysParams::new(1.0, 1.0, 1.0 / 12.0, 64.0, 0.0).unwrap()
    }

    #[test]
    fn grid_validates_shape() {
        assert!(Grid::new(48, -1.0, 1.0, 1.0).is_err());
        assert!(Grid::new(64, 2.0, 1.0, 1.0).is_err());
        assert!(Grid::new(64, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn unit_symbol_quantizes_to_identity() {
        let g = grid64();
        let m = weyl_quantize(&SymbolEvaluator::from_fn(|_, _| Complex64::new(1.0, 0.0)), &g).unwrap();
        for j in 0..g.n() {
            for k in 0..g.n() {
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((m[[j, k]] - want).norm() < 1e-12, "({j},{k}) = {}", m[[j, k]]);
            }
        }
    }

    #[test]
    fn coordinate_symbol_quantizes_to_diagonal() {
        let g = grid64();
        let m = weyl_quantize(&SymbolEvaluator::from_fn(|x, _| Complex64::new(x, 0.0)), &g).unwrap();
        for j in 0..g.n() {
            for k in 0..g.n() {
                let want = if j == k { g.x(j) } else { 0.0 };
                assert!((m[[j, k]] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn momentum_symbol_reproduces_plane_wave_eigenvalues() {
        let g = grid64();
        let m = weyl_quantize(&SymbolEvaluator::from_fn(|_, p| Complex64::new(p, 0.0)), &g).unwrap();
        for &k in &[1i64, 5, -7, 31] {
            let pk = g.dp() * k as f64;
            let wave: Vec<Complex64> = (0..g.n())
                .map(|j| (Complex64::i() * pk * g.x(j) / g.hbar()).exp())
                .collect();
            let mut max_rel = 0.0f64;
            for j in 0..g.n() {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..g.n() {
                    acc += m[[j, l]] * wave[l];
                }
                let rel = (acc - pk * wave[j]).norm() / pk.abs().max(1.0);
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-10, "k={k}: rel err {max_rel}");
        }
    }

    #[test]
    fn symmetrized_xp_matches_operator_product() {
        // Weyl(2xp) = X P + P X
        let g = grid64();
        let x = weyl_quantize(&SymbolEvaluator::from_fn(|x, _| Complex64::new(x, 0.0)), &g).unwrap();
        let p = weyl_quantize(&SymbolEvaluator::from_fn(|_, p| Complex64::new(p, 0.0)), &g).unwrap();
        let xp = weyl_quantize(&SymbolEvaluator::from_fn(|x, p| Complex64::new(2.0 * x * p, 0.0)), &g).unwrap();
        let composed = x.dot(&p) + p.dot(&x);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..g.n() {
            for k in 0..g.n() {
                num += (xp[[j, k]] - composed[[j, k]]).norm_sqr();
                den += composed[[j, k]].norm_sqr();
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-8, "Frobenius-relative error {rel}");
    }

    #[test]
    fn quantization_is_linear_in_the_symbol() {
        let g = grid64();
        let f1 = weyl_quantize(&SymbolEvaluator::from_fn(|x, p| Complex64::new(x * p, 0.0)), &g).unwrap();
        let f2 = weyl_quantize(&SymbolEvaluator::from_fn(|x, _| Complex64::new(x * x, 0.0)), &g).unwrap();
        let combo = weyl_quantize(
            &SymbolEvaluator::from_fn(|x, p| Complex64::new(2.0 * x * p + 3.0 * x * x, 0.0)),
            &g,
        )
        .unwrap();
        let direct = f1.mapv(|z| z * 2.0) + f2.mapv(|z| z * 3.0);
        for j in 0..g.n() {
            for k in 0..g.n() {
                assert!((combo[[j, k]] - direct[[j, k]]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn free_hamiltonian_plane_wave_energy() {
        let g = grid64();
        let h = hamiltonian(&g, &params(), &Potential::Free).unwrap();
        let k = 5i64;
        let pk = g.dp() * k as f64;
        let wave: Vec<Complex64> = (0..g.n())
            .map(|j| (Complex64::i() * pk * g.x(j) / g.hbar()).exp())
            .collect();
        let e_want = pk * pk / 2.0;
        for j in 0..g.n() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..g.n() {
                acc += h[[j, l]] * wave[l];
            }
            assert!((acc - e_want * wave[j]).norm() < 1e-9);
        }
    }

    #[test]
    fn harmonic_ground_state_energy() {
        let g = Grid::new(128, -10.0, 10.0, 1.0).unwrap();
        let h = hamiltonian(&g, &params(), &Potential::Harmonic { omega: 1.0 }).unwrap();
        let ev = hermitian_eigenvalues(&h);
        assert!((ev[0] - 0.5).abs() < 1e-6, "ground energy {}", ev[0]);
        assert!((ev[1] - 1.5).abs() < 1e-5, "first excited {}", ev[1]);
    }

    #[test]
    fn polynomial_potential_matches_harmonic() {
        let g = grid64();
        let h1 = hamiltonian(&g, &params(), &Potential::Harmonic { omega: 1.0 }).unwrap();
        let h2 = hamiltonian(
            &g,
            &params(),
            &Potential::Polynomial { coeffs: vec![0.0, 0.0, 0.5] },
        )
        .unwrap();
        for j in 0..g.n() {
            for k in 0..g.n() {
                assert!((h1[[j, k]] - h2[[j, k]]).norm() < 1e-12);
            }
        }
        // and the derivative coefficients agree too
        let pot = Potential::Polynomial { coeffs: vec![1.0, -2.0, 0.5, 3.0] };
        let x = 1.7;
        let fd = (pot.u(x + 1e-6, 1.0) - pot.u(x - 1e-6, 1.0)) / 2e-6;
        assert!((pot.u_prime(x, 1.0) - fd).abs() < 1e-5);
    }

    #[test]
    fn observable_suite_is_hermitian_and_delta_peaks_at_p0() {
        let params = PhysParams::new(1.0, 1.0, 0.25, 64.0, 0.0).unwrap();
        let sym = build_signed_symbols(&params).unwrap();
        let g = Grid::new(128, -20.0, 20.0, 1.0).unwrap();
        let suite = observable_suite(&g, &sym, &Potential::Free).unwrap();

        // A state sharply peaked at p = 0: uniform wavefunction.
        let n = g.n();
        let amp = 1.0 / (n as f64).sqrt();
        let mut rho = Array2::<Complex64>::zeros((n, n));
        for j in 0..n {
            for k in 0..n {
                rho[[j, k]] = Complex64::new(amp * amp, 0.0);
            }
        }
        let (delta_mean, imag) = expectation(&rho, &suite.delta);
        // delta(p=0) = 4 hbar / lambda^2
        let want = 4.0 * params.hbar / (params.lambda * params.lambda);
        assert!(imag < 1e-10);
        assert!(
            (delta_mean - want).abs() < 1e-8,
            "delta mean {delta_mean} vs {want}"
        );
    }

    #[test]
    fn friction_operator_finite_on_p_zero_line(){
        let params = PhysParams::new(1.0, 1.0, 0.25, 2.0, 0.0).unwrap();
        let sym = build_signed_symbols(&params).unwrap();
        let g = Grid::new(32, -8.0, 8.0, 1.0).unwrap();
        let a = friction_operator(&g, &sym).unwrap();
        for j in 0..g.n() {
            for k in 0..g.n() {
                assert!(a[[j, k]].is_finite());
            }
        }
    }
}
