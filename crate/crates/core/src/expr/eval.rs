//! Numeric evaluation of expression DAGs and randomized zero-testing.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Expr, Name, Node};
use crate::scalar::{complex_abs, complex_powi, Real};

/// Evaluator callback for an uninterpreted function: receives the argument
/// values and the derivative multi-index.
pub type FuncEval<R> = Arc<dyn Fn(&[Complex<R>], &[u32]) -> Complex<R> + Send + Sync>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("no evaluator bound for function `{0}`")]
    UnboundFunction(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("exponent {num}/{den} unsupported by this scalar type")]
    UnsupportedExponent { num: i64, den: i64 },
    #[error("at sample point {point}: {source}")]
    AtPoint {
        point: String,
        #[source]
        source: Box<EvalError>,
    },
}

/// Variable and function bindings for one evaluation.
pub struct Bindings<R: Real> {
    vars: HashMap<Name, Complex<R>>,
    funcs: HashMap<Name, FuncEval<R>>,
}

impl<R: Real> Clone for Bindings<R> {
    fn clone(&self) -> Self {
        Bindings {
            vars: self.vars.clone(),
            funcs: self.funcs.clone(),
        }
    }
}

impl<R: Real> Default for Bindings<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Bindings<R> {
    pub fn new() -> Self {
        Bindings {
            vars: HashMap::new(),
            funcs: HashMap::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: Complex<R>) -> &mut Self {
        self.vars.insert(super::name(name), value);
        self
    }

    pub fn set_real(&mut self, name: &str, value: f64) -> &mut Self {
        self.set(name, Complex::new(R::from_f64(value), R::zero()))
    }

    pub fn set_func(&mut self, name: &str, f: FuncEval<R>) -> &mut Self {
        self.funcs.insert(super::name(name), f);
        self
    }

    pub fn get(&self, name: &str) -> Option<Complex<R>> {
        self.vars.get(name).copied()
    }
}

/// Evaluates an expression DAG; shared subtrees are computed once.
pub fn evaluate<R: Real>(e: &Expr, b: &Bindings<R>) -> Result<Complex<R>, EvalError> {
    let mut memo: HashMap<usize, Complex<R>> = HashMap::new();
    eval_memo(e, b, &mut memo)
}

/// Evaluates several expressions sharing one memo table, so common
/// subtrees across them are computed once.
pub fn evaluate_batch<R: Real>(
    exprs: &[Expr],
    b: &Bindings<R>,
) -> Result<Vec<Complex<R>>, EvalError> {
    let mut memo: HashMap<usize, Complex<R>> = HashMap::new();
    exprs.iter().map(|e| eval_memo(e, b, &mut memo)).collect()
}

fn eval_memo<R: Real>(
    e: &Expr,
    b: &Bindings<R>,
    memo: &mut HashMap<usize, Complex<R>>,
) -> Result<Complex<R>, EvalError> {
    if let Some(hit) = memo.get(&e.ptr_key()) {
        return Ok(*hit);
    }
    let v = match e.node() {
        Node::Constant(c) => c.to_complex::<R>(),
        Node::Variable(n) => b
            .vars
            .get(n)
            .copied()
            .ok_or_else(|| EvalError::UnboundVariable(n.to_string()))?,
        Node::Sum(ts) => {
            let mut acc = Complex::new(R::zero(), R::zero());
            for t in ts {
                acc = acc + eval_memo(t, b, memo)?;
            }
            acc
        }
        Node::Product(fs) => {
            let mut acc = Complex::new(R::one(), R::zero());
            for f in fs {
                acc = acc * eval_memo(f, b, memo)?;
            }
            acc
        }
        Node::Power(base, q) => {
            let vb = eval_memo(base, b, memo)?;
            if q.is_integer() {
                let n = *q.numer();
                if vb.re == R::zero() && vb.im == R::zero() && n < 0 {
                    return Err(EvalError::Domain(format!(
                        "zero raised to negative power {n}"
                    )));
                }
                complex_powi(vb, n)
            } else {
                // Fractional powers require a positive real radicand.
                let re_f = vb.re.to_f64();
                let im_f = vb.im.to_f64();
                if im_f.abs() > 1e-12 * (1.0 + re_f.abs()) {
                    return Err(EvalError::Domain(format!(
                        "fractional power of non-real value {re_f}+{im_f}i"
                    )));
                }
                if re_f <= 0.0 {
                    return Err(EvalError::Domain(format!(
                        "fractional power of non-positive radicand {re_f}"
                    )));
                }
                let r = vb
                    .re
                    .pow_ratio(*q.numer(), *q.denom())
                    .ok_or(EvalError::UnsupportedExponent {
                        num: *q.numer(),
                        den: *q.denom(),
                    })?;
                Complex::new(r, R::zero())
            }
        }
        Node::Func(f) => {
            let eval = b
                .funcs
                .get(&f.name)
                .ok_or_else(|| EvalError::UnboundFunction(f.name.to_string()))?;
            let mut point = Vec::with_capacity(f.args.len());
            for a in &f.args {
                point.push(
                    b.vars
                        .get(a)
                        .copied()
                        .ok_or_else(|| EvalError::UnboundVariable(a.to_string()))?,
                );
            }
            eval(&point, &f.orders)
        }
    };
    memo.insert(e.ptr_key(), v);
    Ok(v)
}

// ---------------------------------------------------------------------------
// Randomized zero-testing
// ---------------------------------------------------------------------------

/// Sampling plan for randomized identity checks: how many points, the real
/// interval for each free variable, the RNG seed and the tolerances.
///
/// A degenerate interval (`lo == hi`) pins a variable to a constant.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub count: usize,
    pub intervals: Vec<(Name, f64, f64)>,
    pub seed: u64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl SampleSpec {
    pub fn new(seed: u64) -> Self {
        SampleSpec {
            count: 20,
            intervals: Vec::new(),
            seed,
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        }
    }

    pub fn var(mut self, name: &str, lo: f64, hi: f64) -> Self {
        assert!(lo <= hi && lo.is_finite() && hi.is_finite());
        self.intervals.push((super::name(name), lo, hi));
        self
    }

    pub fn count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<(Name, f64)> {
        self.intervals
            .iter()
            .map(|(n, lo, hi)| {
                let v = if lo == hi { *lo } else { rng.gen_range(*lo..*hi) };
                (n.clone(), v)
            })
            .collect()
    }
}

/// Result of a randomized zero test.
#[derive(Clone, Debug)]
pub struct ZeroCheck {
    pub is_zero: bool,
    /// Largest |value| seen over all sample points.
    pub max_abs: f64,
    /// Sample point with the worst tolerance ratio.
    pub worst_point: Vec<(Name, f64)>,
    /// Reference scale (largest additive-term magnitude) at the worst point.
    pub worst_scale: f64,
}

impl ZeroCheck {
    fn trivially_zero() -> Self {
        ZeroCheck {
            is_zero: true,
            max_abs: 0.0,
            worst_point: Vec::new(),
            worst_scale: 0.0,
        }
    }
}

fn point_string(point: &[(Name, f64)]) -> String {
    let parts: Vec<String> = point.iter().map(|(n, v)| format!("{n}={v}")).collect();
    format!("({})", parts.join(", "))
}

/// Tests whether `e` vanishes at `spec.count` random points.
///
/// The pass tolerance at a point is `abs_tol + rel_tol * scale`, where
/// `scale` is the largest magnitude among the expression's top-level
/// additive terms there. That absorbs the cancellation round-off that the
/// high-order series coefficients inevitably carry.
///
/// `base` supplies function evaluators and any pre-bound variables.
pub fn is_zero_numeric(
    e: &Expr,
    spec: &SampleSpec,
    base: &Bindings<f64>,
) -> Result<ZeroCheck, EvalError> {
    let mut out = is_zero_numeric_batch(std::slice::from_ref(e), spec, base)?;
    Ok(out.pop().unwrap())
}

/// Batch variant of [`is_zero_numeric`]: evaluates all expressions at the
/// same sample points with a shared memo table, so subtrees common across
/// the batch (star-product fragments, typically) are evaluated once.
pub fn is_zero_numeric_batch(
    exprs: &[Expr],
    spec: &SampleSpec,
    base: &Bindings<f64>,
) -> Result<Vec<ZeroCheck>, EvalError> {
    let term_lists: Vec<Vec<Expr>> = exprs.iter().map(|e| e.sum_terms()).collect();
    let mut checks: Vec<ZeroCheck> = exprs.iter().map(|_| ZeroCheck::trivially_zero()).collect();
    let mut worst_ratio: Vec<f64> = vec![-1.0; exprs.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut memo: HashMap<usize, Complex<f64>> = HashMap::new();
    for _ in 0..spec.count {
        let point = spec.draw(&mut rng);
        let mut b = base.clone();
        for (n, v) in &point {
            b.set_real(n, *v);
        }
        memo.clear();
        for (idx, terms) in term_lists.iter().enumerate() {
            let mut value = Complex::new(0.0, 0.0);
            let mut scale = 0.0f64;
            for t in terms {
                let tv = eval_memo(t, &b, &mut memo).map_err(|err| EvalError::AtPoint {
                    point: point_string(&point),
                    source: Box::new(err),
                })?;
                value = value + tv;
                scale = scale.max(complex_abs(tv));
            }
            let mag = complex_abs(value);
            let tol = spec.abs_tol + spec.rel_tol * scale;
            let ratio = mag / tol;
            let c = &mut checks[idx];
            c.max_abs = c.max_abs.max(mag);
            if ratio > worst_ratio[idx] {
                worst_ratio[idx] = ratio;
                c.worst_point = point.clone();
                c.worst_scale = scale;
            }
            if mag > tol {
                c.is_zero = false;
            }
        }
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::DoubleDouble;

    #[test]
    fn sqrt_evaluation_matches_reference() {
        // sqrt(lambda p + hbar) at lambda=64, p=1, hbar=1 -> sqrt(65)
        let e = Expr::sqrt(Expr::var("lambda") * Expr::var("p") + Expr::var("hbar"));
        let mut b = Bindings::<f64>::new();
        b.set_real("lambda", 64.0).set_real("p", 1.0).set_real("hbar", 1.0);
        let v = evaluate(&e, &b).unwrap();
        assert!((v.re - 65f64.sqrt()).abs() < 1e-14 && v.im == 0.0);
    }

    #[test]
    fn product_evaluation() {
        let e = Expr::var("x") * Expr::var("p");
        let mut b = Bindings::<f64>::new();
        b.set_real("x", 2.0).set_real("p", 3.0);
        assert_eq!(evaluate(&e, &b).unwrap(), Complex::new(6.0, 0.0));
    }

    #[test]
    fn non_positive_radicand_is_domain_error() {
        // (lambda p + hbar)^(-1/2) at the zero boundary
        let e = Expr::pow(
            Expr::var("lambda") * Expr::var("p") + Expr::var("hbar"),
            num_rational::Rational64::new(-1, 2),
        );
        let mut b = Bindings::<f64>::new();
        b.set_real("lambda", 2.0).set_real("p", 0.5).set_real("hbar", -1.0);
        match evaluate(&e, &b) {
            Err(EvalError::Domain(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn unbound_variable_reported_by_name() {
        let e = Expr::var("mystery");
        let b = Bindings::<f64>::new();
        match evaluate(&e, &b) {
            Err(EvalError::UnboundVariable(n)) => assert_eq!(n, "mystery"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn evaluation_is_referentially_transparent() {
        let e = Expr::sqrt(Expr::var("x") * Expr::var("p") + Expr::ratio(1, 3));
        let mut b = Bindings::<f64>::new();
        b.set_real("x", 1.37).set_real("p", 0.61);
        let v1 = evaluate(&e, &b).unwrap();
        let v2 = evaluate(&e, &b).unwrap();
        assert_eq!(v1.re.to_bits(), v2.re.to_bits());
        assert_eq!(v1.im.to_bits(), v2.im.to_bits());
    }

    #[test]
    fn algebraic_identity_passes_zero_test() {
        // sqrt(r)*sqrt(r) - r with r = lambda p + hbar
        let r = Expr::var("lambda") * Expr::var("p") + Expr::var("hbar");
        let e = Expr::sqrt(r.clone()) * Expr::sqrt(r.clone()) - r;
        let spec = SampleSpec::new(7)
            .var("lambda", 0.5, 64.0)
            .var("p", 0.1, 5.0)
            .var("hbar", 0.5, 2.0);
        let chk = is_zero_numeric(&e, &spec, &Bindings::new()).unwrap();
        assert!(chk.is_zero, "max_abs = {}", chk.max_abs);
        assert!(chk.max_abs < 1e-12);
    }

    #[test]
    fn non_identity_fails_zero_test() {
        let e = Expr::var("x") - Expr::var("p");
        let spec = SampleSpec::new(3).var("x", 1.0, 2.0).var("p", 1.0, 2.0);
        let chk = is_zero_numeric(&e, &spec, &Bindings::new()).unwrap();
        assert!(!chk.is_zero);
        assert!(chk.max_abs > 1e-3);
    }

    #[test]
    fn extended_precision_evaluation() {
        let e = Expr::sqrt(Expr::var("r"));
        let mut b = Bindings::<DoubleDouble>::new();
        b.set("r", Complex::new(DoubleDouble::new(2.0), DoubleDouble::new(0.0)));
        let v = evaluate(&e, &b).unwrap();
        let r = v.re * v.re - DoubleDouble::new(2.0);
        assert!(r.to_f64().abs() < 1e-30);
    }

    #[test]
    fn func_evaluator_receives_multi_index() {
        let w = Expr::func("W", &["x", "p"]).differentiate("p");
        let mut b = Bindings::<f64>::new();
        b.set_real("x", 1.5).set_real("p", 2.0);
        b.set_func(
            "W",
            Arc::new(|args: &[Complex<f64>], orders: &[u32]| {
                assert_eq!(orders, &[0, 1]);
                Complex::new(args[0].re * args[1].re, 0.0)
            }),
        );
        let v = evaluate(&w, &b).unwrap();
        assert_eq!(v, Complex::new(3.0, 0.0));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let e = Expr::var("x");
        let spec = SampleSpec::new(42).var("x", -1.0, 1.0).count(5);
        let a = is_zero_numeric(&e, &spec, &Bindings::new()).unwrap();
        let b = is_zero_numeric(&e, &spec, &Bindings::new()).unwrap();
        assert_eq!(a.max_abs.to_bits(), b.max_abs.to_bits());
    }
}
