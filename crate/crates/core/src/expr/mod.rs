//! A minimal symbolic kernel: immutable expression trees over phase-space
//! variables with exact rational constants, exact differentiation, numeric
//! evaluation and ℏ-series coefficient extraction.
//!
//! Trees are built through smart constructors that flatten nested sums and
//! products, fold constants exactly, merge powers of identical bases and
//! collect identical additive terms. Subtrees are shared via `Arc`, so
//! repeated differentiation produces DAGs rather than exploding trees.
//! Simplification is best-effort; nothing downstream depends on a canonical
//! form beyond what the constructors guarantee.

mod calculus;
mod eval;

pub use calculus::{factorial_ratio, hbar_series_coefficient, HBAR};
pub use eval::{
    evaluate, evaluate_batch, is_zero_numeric, is_zero_numeric_batch, Bindings, EvalError,
    FuncEval, SampleSpec, ZeroCheck,
};

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::{BigRational, Rational64};

use crate::scalar::Real;

/// Interned-ish variable / function name.
pub type Name = Arc<str>;

/// Exact rational exponent of a `Power` node.
pub type Exponent = Rational64;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

// ---------------------------------------------------------------------------
// Exact complex rational constants
// ---------------------------------------------------------------------------

/// A complex number with exact rational real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Constant {
    re: BigRational,
    im: BigRational,
}

impl Constant {
    pub fn new(re: BigRational, im: BigRational) -> Self {
        Constant { re, im }
    }

    pub fn from_int(v: i64) -> Self {
        Constant::new(BigRational::from_integer(v.into()), BigRational::default())
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Constant::new(
            BigRational::new(num.into(), den.into()),
            BigRational::default(),
        )
    }

    /// Exact conversion: every finite f64 is a rational.
    pub fn from_f64(v: f64) -> Self {
        Constant::new(
            BigRational::from_float(v).expect("finite float"),
            BigRational::default(),
        )
    }

    pub fn i() -> Self {
        Constant::new(BigRational::default(), BigRational::from_integer(1.into()))
    }

    pub fn zero() -> Self {
        Constant::new(BigRational::default(), BigRational::default())
    }

    pub fn one() -> Self {
        Constant::from_int(1)
    }

    pub fn is_zero(&self) -> bool {
        self.re.numer().bits() == 0 && self.im.numer().bits() == 0
    }

    pub fn is_one(&self) -> bool {
        self.im.numer().bits() == 0 && self.re == BigRational::from_integer(1.into())
    }

    pub fn is_real(&self) -> bool {
        self.im.numer().bits() == 0
    }

    pub fn re(&self) -> &BigRational {
        &self.re
    }

    pub fn im(&self) -> &BigRational {
        &self.im
    }

    pub fn add(&self, o: &Constant) -> Constant {
        Constant::new(&self.re + &o.re, &self.im + &o.im)
    }

    pub fn mul(&self, o: &Constant) -> Constant {
        Constant::new(
            &self.re * &o.re - &self.im * &o.im,
            &self.re * &o.im + &self.im * &o.re,
        )
    }

    pub fn neg(&self) -> Constant {
        Constant::new(-self.re.clone(), -self.im.clone())
    }

    pub fn conj(&self) -> Constant {
        Constant::new(self.re.clone(), -self.im.clone())
    }

    /// 1/z, exact. `None` for z = 0.
    pub fn inv(&self) -> Option<Constant> {
        if self.is_zero() {
            return None;
        }
        let norm = &self.re * &self.re + &self.im * &self.im;
        Some(Constant::new(&self.re / &norm, -(&self.im / &norm)))
    }

    /// z^n, exact. `None` for 0^negative.
    pub fn powi(&self, n: i64) -> Option<Constant> {
        if n == 0 {
            return Some(Constant::one());
        }
        let mut base = if n < 0 { self.inv()? } else { self.clone() };
        let mut exp = n.unsigned_abs();
        let mut acc = Constant::one();
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            exp >>= 1;
        }
        Some(acc)
    }

    pub fn to_complex<R: Real>(&self) -> Complex<R> {
        Complex::new(R::from_big_ratio(&self.re), R::from_big_ratio(&self.im))
    }
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

/// Uninterpreted function with a formal derivative multi-index, so that
/// differentiation of unknowns (like the Wigner test function) stays closed
/// within the expression type.
#[derive(Clone, Debug, PartialEq)]
pub struct FuncNode {
    pub name: Name,
    pub args: Vec<Name>,
    pub orders: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Constant(Constant),
    Variable(Name),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Power(Expr, Exponent),
    Func(FuncNode),
}

struct Inner {
    node: Node,
    hash: u64,
    size: u32,
}

/// Immutable, shareable expression. Cloning is an `Arc` bump.
#[derive(Clone)]
pub struct Expr(Arc<Inner>);

fn node_hash(node: &Node) -> u64 {
    let mut h = DefaultHasher::new();
    match node {
        Node::Constant(c) => {
            1u8.hash(&mut h);
            c.hash(&mut h);
        }
        Node::Variable(n) => {
            2u8.hash(&mut h);
            n.hash(&mut h);
        }
        Node::Sum(ts) => {
            3u8.hash(&mut h);
            ts.len().hash(&mut h);
            for t in ts {
                h.write_u64(t.hash64());
            }
        }
        Node::Product(fs) => {
            4u8.hash(&mut h);
            fs.len().hash(&mut h);
            for f in fs {
                h.write_u64(f.hash64());
            }
        }
        Node::Power(b, q) => {
            5u8.hash(&mut h);
            h.write_u64(b.hash64());
            q.hash(&mut h);
        }
        Node::Func(f) => {
            6u8.hash(&mut h);
            f.name.hash(&mut h);
            f.args.hash(&mut h);
            f.orders.hash(&mut h);
        }
    }
    h.finish()
}

fn node_size(node: &Node) -> u32 {
    let children: u32 = match node {
        Node::Constant(_) | Node::Variable(_) | Node::Func(_) => 0,
        Node::Sum(ts) => ts.iter().map(|t| t.size()).fold(0u32, u32::saturating_add),
        Node::Product(fs) => fs.iter().map(|f| f.size()).fold(0u32, u32::saturating_add),
        Node::Power(b, _) => b.size(),
    };
    children.saturating_add(1)
}

impl Expr {
    fn raw(node: Node) -> Expr {
        let hash = node_hash(&node);
        let size = node_size(&node);
        Expr(Arc::new(Inner { node, hash, size }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn hash64(&self) -> u64 {
        self.0.hash
    }

    /// Node count, counting shared subtrees each time they appear.
    pub fn size(&self) -> u32 {
        self.0.size
    }

    fn ptr_eq(&self, o: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &o.0)
    }

    pub(crate) fn ptr_key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    // -- leaf constructors --------------------------------------------------

    pub fn zero() -> Expr {
        Expr::raw(Node::Constant(Constant::zero()))
    }

    pub fn one() -> Expr {
        Expr::raw(Node::Constant(Constant::one()))
    }

    pub fn i() -> Expr {
        Expr::raw(Node::Constant(Constant::i()))
    }

    pub fn int(v: i64) -> Expr {
        Expr::raw(Node::Constant(Constant::from_int(v)))
    }

    pub fn ratio(num: i64, den: i64) -> Expr {
        Expr::raw(Node::Constant(Constant::from_ratio(num, den)))
    }

    pub fn constant(c: Constant) -> Expr {
        Expr::raw(Node::Constant(c))
    }

    /// Exact embedding of a float (every finite f64 is rational).
    pub fn from_f64(v: f64) -> Expr {
        Expr::raw(Node::Constant(Constant::from_f64(v)))
    }

    pub fn complex_f64(v: Complex<f64>) -> Expr {
        Expr::raw(Node::Constant(Constant::new(
            BigRational::from_float(v.re).expect("finite float"),
            BigRational::from_float(v.im).expect("finite float"),
        )))
    }

    pub fn var(n: &str) -> Expr {
        Expr::raw(Node::Variable(name(n)))
    }

    /// Uninterpreted function of the given argument variables.
    pub fn func(fname: &str, args: &[&str]) -> Expr {
        let args: Vec<Name> = args.iter().map(|a| name(a)).collect();
        for (i, a) in args.iter().enumerate() {
            assert!(
                !args[..i].contains(a),
                "duplicate function argument `{a}`"
            );
        }
        let orders = vec![0; args.len()];
        Expr::raw(Node::Func(FuncNode {
            name: name(fname),
            args,
            orders,
        }))
    }

    pub(crate) fn func_node(f: FuncNode) -> Expr {
        Expr::raw(Node::Func(f))
    }

    // -- predicates / accessors ---------------------------------------------

    pub fn as_constant(&self) -> Option<&Constant> {
        match self.node() {
            Node::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_literal_zero(&self) -> bool {
        self.as_constant().is_some_and(|c| c.is_zero())
    }

    pub fn is_literal_one(&self) -> bool {
        self.as_constant().is_some_and(|c| c.is_one())
    }

    /// Top-level additive terms (the expression itself if not a sum).
    pub fn sum_terms(&self) -> Vec<Expr> {
        match self.node() {
            Node::Sum(ts) => ts.clone(),
            _ => vec![self.clone()],
        }
    }

    /// Free variables of the expression, including function arguments.
    pub fn variables(&self) -> std::collections::BTreeSet<Name> {
        fn walk(e: &Expr, seen: &mut HashMap<usize, ()>, out: &mut std::collections::BTreeSet<Name>) {
            if seen.insert(e.ptr_key(), ()).is_some() {
                return;
            }
            match e.node() {
                Node::Constant(_) => {}
                Node::Variable(n) => {
                    out.insert(n.clone());
                }
                Node::Sum(ts) | Node::Product(ts) => {
                    for t in ts {
                        walk(t, seen, out);
                    }
                }
                Node::Power(b, _) => walk(b, seen, out),
                Node::Func(f) => {
                    for a in &f.args {
                        out.insert(a.clone());
                    }
                }
            }
        }
        let mut out = std::collections::BTreeSet::new();
        walk(self, &mut HashMap::new(), &mut out);
        out
    }

    /// True if some subtree is `v^q` with `q < 0` for the given variable.
    /// Used as a guard before ℏ → 0 substitutions.
    pub fn has_negative_power_of(&self, v: &str) -> bool {
        fn walk(e: &Expr, v: &str, seen: &mut HashMap<usize, ()>) -> bool {
            if seen.insert(e.ptr_key(), ()).is_some() {
                return false;
            }
            match e.node() {
                Node::Power(b, q) => {
                    (matches!(b.node(), Node::Variable(n) if n.as_ref() == v)
                        && *q < Exponent::default())
                        || walk(b, v, seen)
                }
                Node::Sum(ts) | Node::Product(ts) => ts.iter().any(|t| walk(t, v, seen)),
                _ => false,
            }
        }
        walk(self, v, &mut HashMap::new())
    }

    // -- compound constructors ----------------------------------------------

    pub fn sum(terms: Vec<Expr>) -> Expr {
        mk_sum(terms)
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        mk_product(factors)
    }

    pub fn pow(base: Expr, q: Exponent) -> Expr {
        mk_pow(base, q)
    }

    pub fn pow_int(base: Expr, n: i64) -> Expr {
        mk_pow(base, Exponent::from_integer(n))
    }

    pub fn sqrt(base: Expr) -> Expr {
        mk_pow(base, Exponent::new(1, 2))
    }

    pub fn neg(&self) -> Expr {
        mk_product(vec![Expr::int(-1), self.clone()])
    }

    pub fn recip(&self) -> Expr {
        mk_pow(self.clone(), Exponent::from_integer(-1))
    }

    /// Complex conjugate, assuming every variable and uninterpreted function
    /// is real-valued.
    pub fn conjugate(&self) -> Expr {
        let mut memo: HashMap<usize, Expr> = HashMap::new();
        conj_memo(self, &mut memo)
    }
}

fn conj_memo(e: &Expr, memo: &mut HashMap<usize, Expr>) -> Expr {
    if let Some(hit) = memo.get(&e.ptr_key()) {
        return hit.clone();
    }
    let out = match e.node() {
        Node::Constant(c) => {
            if c.is_real() {
                e.clone()
            } else {
                Expr::constant(c.conj())
            }
        }
        Node::Variable(_) | Node::Func(_) => e.clone(),
        Node::Sum(ts) => mk_sum(ts.iter().map(|t| conj_memo(t, memo)).collect()),
        Node::Product(fs) => mk_product(fs.iter().map(|f| conj_memo(f, memo)).collect()),
        Node::Power(b, q) => mk_pow(conj_memo(b, memo), *q),
    };
    memo.insert(e.ptr_key(), out.clone());
    out
}

// ---------------------------------------------------------------------------
// Canonical ordering, equality, hashing
// ---------------------------------------------------------------------------

fn rank(node: &Node) -> u8 {
    match node {
        Node::Constant(_) => 0,
        Node::Variable(_) => 1,
        Node::Power(..) => 2,
        Node::Func(_) => 3,
        Node::Product(_) => 4,
        Node::Sum(_) => 5,
    }
}

/// Deterministic total order used to canonicalise operand lists.
pub(crate) fn canonical_cmp(a: &Expr, b: &Expr) -> Ordering {
    if a.ptr_eq(b) {
        return Ordering::Equal;
    }
    let r = rank(a.node()).cmp(&rank(b.node()));
    if r != Ordering::Equal {
        return r;
    }
    let h = a.hash64().cmp(&b.hash64());
    if h != Ordering::Equal {
        return h;
    }
    structural_cmp(a, b)
}

fn structural_cmp(a: &Expr, b: &Expr) -> Ordering {
    match (a.node(), b.node()) {
        (Node::Constant(x), Node::Constant(y)) => {
            x.re.cmp(&y.re).then_with(|| x.im.cmp(&y.im))
        }
        (Node::Variable(x), Node::Variable(y)) => x.cmp(y),
        (Node::Power(bx, qx), Node::Power(by, qy)) => {
            canonical_cmp(bx, by).then_with(|| qx.cmp(qy))
        }
        (Node::Func(x), Node::Func(y)) => x
            .name
            .cmp(&y.name)
            .then_with(|| x.args.cmp(&y.args))
            .then_with(|| x.orders.cmp(&y.orders)),
        (Node::Sum(xs), Node::Sum(ys)) | (Node::Product(xs), Node::Product(ys)) => {
            xs.len().cmp(&ys.len()).then_with(|| {
                for (x, y) in xs.iter().zip(ys) {
                    let c = canonical_cmp(x, y);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            })
        }
        _ => unreachable!("rank already distinguished node kinds"),
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other) || (self.hash64() == other.hash64() && self.node() == other.node())
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.hash64());
    }
}

// ---------------------------------------------------------------------------
// Smart constructors
// ---------------------------------------------------------------------------

fn flatten_into(e: Expr, kind_sum: bool, out: &mut Vec<Expr>) {
    match (kind_sum, e.node()) {
        (true, Node::Sum(ts)) => {
            for t in ts.clone() {
                flatten_into(t, true, out);
            }
        }
        (false, Node::Product(fs)) => {
            for f in fs.clone() {
                flatten_into(f, false, out);
            }
        }
        _ => out.push(e),
    }
}

/// Splits a canonical term into (rational coefficient, residual core).
/// A product holds at most one constant factor after folding.
fn split_coefficient(e: &Expr) -> (Constant, Expr) {
    if let Node::Product(fs) = e.node() {
        if let Some(pos) = fs.iter().position(|f| f.as_constant().is_some()) {
            let c = fs[pos].as_constant().unwrap().clone();
            let rest: Vec<Expr> = fs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pos)
                .map(|(_, f)| f.clone())
                .collect();
            let core = if rest.len() == 1 {
                rest.into_iter().next().unwrap()
            } else {
                // Factors stay sorted after removing one element.
                Expr::raw(Node::Product(rest))
            };
            return (c, core);
        }
    }
    (Constant::one(), e.clone())
}

/// Rebuilds `coeff * core` keeping product factors sorted.
fn term_from(coeff: Constant, core: Expr) -> Expr {
    if coeff.is_one() {
        return core;
    }
    let cexpr = Expr::constant(coeff);
    match core.node() {
        Node::Product(fs) => {
            let mut v = Vec::with_capacity(fs.len() + 1);
            v.push(cexpr);
            v.extend(fs.iter().cloned());
            // Constants rank first; the rest keeps its order.
            Expr::raw(Node::Product(v))
        }
        _ => Expr::raw(Node::Product(vec![cexpr, core])),
    }
}

fn mk_sum(terms: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        flatten_into(t, true, &mut flat);
    }

    let mut const_acc = Constant::zero();
    let mut coeffs: HashMap<Expr, Constant> = HashMap::new();
    for t in flat {
        if let Some(c) = t.as_constant() {
            const_acc = const_acc.add(c);
            continue;
        }
        let (c, core) = split_coefficient(&t);
        match coeffs.get_mut(&core) {
            Some(acc) => *acc = acc.add(&c),
            None => {
                coeffs.insert(core, c);
            }
        }
    }

    let mut pairs: Vec<(Expr, Constant)> =
        coeffs.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    pairs.sort_by(|a, b| canonical_cmp(&a.0, &b.0));

    let mut out: Vec<Expr> = Vec::with_capacity(pairs.len() + 1);
    if !const_acc.is_zero() {
        out.push(Expr::constant(const_acc));
    }
    out.extend(pairs.into_iter().map(|(core, c)| term_from(c, core)));

    match out.len() {
        0 => Expr::zero(),
        1 => out.into_iter().next().unwrap(),
        _ => Expr::raw(Node::Sum(out)),
    }
}

fn mk_product(factors: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(factors.len());
    for f in factors {
        flatten_into(f, false, &mut flat);
    }

    // A zero-base negative power must stay visible: folding `0 * 0^-q` to
    // zero would silently assign a value to an undefined point.
    if flat.iter().any(|f| match f.node() {
        Node::Power(b, q) => b.is_literal_zero() && *q < Exponent::default(),
        _ => false,
    }) {
        flat.sort_by(canonical_cmp);
        return Expr::raw(Node::Product(flat));
    }

    let mut const_acc = Constant::one();
    let mut powers: HashMap<Expr, Exponent> = HashMap::new();
    let mut order_hint: Vec<Expr> = Vec::new();
    for f in flat {
        match f.node() {
            Node::Constant(c) => {
                if c.is_zero() {
                    return Expr::zero();
                }
                const_acc = const_acc.mul(c);
            }
            Node::Power(b, q) => {
                let e = powers.entry(b.clone()).or_insert_with(Exponent::default);
                if e.numer() == &0 {
                    order_hint.push(b.clone());
                }
                *e += q;
            }
            _ => {
                let e = powers.entry(f.clone()).or_insert_with(Exponent::default);
                if e.numer() == &0 {
                    order_hint.push(f.clone());
                }
                *e += Exponent::from_integer(1);
            }
        }
    }

    let mut out: Vec<Expr> = Vec::new();
    for base in order_hint {
        let q = powers[&base];
        if q.numer() == &0 {
            continue;
        }
        if let Some(c) = base.as_constant() {
            if q.is_integer() {
                if let Some(folded) = c.powi(*q.numer()) {
                    const_acc = const_acc.mul(&folded);
                    continue;
                }
            }
        }
        if q == Exponent::from_integer(1) {
            out.push(base);
        } else {
            out.push(mk_pow(base, q));
        }
    }
    // mk_pow may have produced constants (e.g. collapsing (c)^n); refold.
    let mut final_out = Vec::with_capacity(out.len() + 1);
    for f in out {
        match f.node() {
            Node::Constant(c) => {
                if c.is_zero() {
                    return Expr::zero();
                }
                const_acc = const_acc.mul(c);
            }
            _ => final_out.push(f),
        }
    }

    if const_acc.is_zero() {
        return Expr::zero();
    }
    // c * (a + b + ...) distributes, so sums stay flat and collectable.
    if final_out.len() == 1 && !const_acc.is_one() {
        if let Node::Sum(ts) = final_out[0].node() {
            let c = Expr::constant(const_acc);
            return mk_sum(ts.iter().map(|t| mk_product(vec![c.clone(), t.clone()])).collect());
        }
    }
    final_out.sort_by(canonical_cmp);
    if !const_acc.is_one() {
        final_out.insert(0, Expr::constant(const_acc));
    }
    match final_out.len() {
        0 => Expr::one(),
        1 => final_out.into_iter().next().unwrap(),
        _ => Expr::raw(Node::Product(final_out)),
    }
}

fn mk_pow(base: Expr, q: Exponent) -> Expr {
    if q.numer() == &0 {
        return Expr::one();
    }
    if q == Exponent::from_integer(1) {
        return base;
    }
    if let Some(c) = base.as_constant() {
        if q.is_integer() {
            if let Some(folded) = c.powi(*q.numer()) {
                return Expr::constant(folded);
            }
            // 0^negative: keep the node; evaluation reports the domain error.
            return Expr::raw(Node::Power(base, q));
        }
        if c.is_zero() && q > Exponent::default() {
            return Expr::zero();
        }
        if c.is_one() {
            return Expr::one();
        }
        return Expr::raw(Node::Power(base, q));
    }
    if q.is_integer() {
        // (b^r)^n = b^(rn) and (uv)^n = u^n v^n hold for all integer n.
        if let Node::Power(b2, q2) = base.node() {
            return mk_pow(b2.clone(), q2 * q);
        }
        if let Node::Product(fs) = base.node() {
            return mk_product(fs.iter().map(|f| mk_pow(f.clone(), q)).collect());
        }
    }
    Expr::raw(Node::Power(base, q))
}

// ---------------------------------------------------------------------------
// Operator sugar
// ---------------------------------------------------------------------------

macro_rules! expr_binop {
    ($trait:ident, $method:ident, $build:expr) => {
        impl std::ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $build;
                f(self.clone(), rhs.clone())
            }
        }
        impl std::ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $build;
                f(self, rhs)
            }
        }
        impl std::ops::$trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $build;
                f(self, rhs.clone())
            }
        }
        impl std::ops::$trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $build;
                f(self.clone(), rhs)
            }
        }
    };
}

expr_binop!(Add, add, |a, b| mk_sum(vec![a, b]));
expr_binop!(Mul, mul, |a, b| mk_product(vec![a, b]));
expr_binop!(Sub, sub, |a, b| mk_sum(vec![a, b.neg()]));

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

// ---------------------------------------------------------------------------
// Display
// ---------------------------------------------------------------------------

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_real() {
            write!(f, "{}", self.re)
        } else if self.re.numer().bits() == 0 {
            write!(f, "{}i", self.im)
        } else {
            write!(f, "({}{}{}i)", self.re, if self.im >= BigRational::default() { "+" } else { "" }, self.im)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Constant(c) => write!(f, "{c}"),
            Node::Variable(n) => write!(f, "{n}"),
            Node::Sum(ts) => {
                write!(f, "(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            Node::Product(fs) => {
                for (i, x) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            Node::Power(b, q) => {
                if q.is_integer() {
                    write!(f, "{b}^{}", q.numer())
                } else {
                    write!(f, "{b}^({}/{})", q.numer(), q.denom())
                }
            }
            Node::Func(u) => {
                write!(f, "{}", u.name)?;
                if u.orders.iter().any(|&o| o > 0) {
                    write!(f, "_")?;
                    for (a, o) in u.args.iter().zip(&u.orders) {
                        for _ in 0..*o {
                            write!(f, "{a}")?;
                        }
                    }
                }
                write!(f, "(")?;
                for (i, a) in u.args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}
