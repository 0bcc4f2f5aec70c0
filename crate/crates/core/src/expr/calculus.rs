//! Exact differentiation, substitution and ℏ-series coefficients.

use std::collections::HashMap;

use num_rational::Rational64;

use super::{Expr, Exponent, FuncNode, Node};

/// Name of the expansion variable used throughout the crate.
pub const HBAR: &str = "hbar";

impl Expr {
    /// Exact partial derivative with respect to the variable `v`.
    ///
    /// Shared subtrees are differentiated once per call, so the result is a
    /// DAG of roughly the input's size times a small factor.
    pub fn differentiate(&self, v: &str) -> Expr {
        let mut memo: HashMap<usize, Expr> = HashMap::new();
        diff_memo(self, v, &mut memo)
    }

    /// Replaces every occurrence of the variable `v` by `r`.
    ///
    /// Rebuilding goes through the smart constructors, so folding such as
    /// `(λp + ℏ)|ℏ→0 = λp` happens on the way out.
    ///
    /// Substituting into an argument slot of an uninterpreted function is
    /// only defined when `r` is itself a variable (a rename); anything else
    /// would be a function composition the kernel does not model, and panics.
    pub fn substitute(&self, v: &str, r: &Expr) -> Expr {
        let mut memo: HashMap<usize, Expr> = HashMap::new();
        subst_memo(self, v, r, &mut memo)
    }
}

fn diff_memo(e: &Expr, v: &str, memo: &mut HashMap<usize, Expr>) -> Expr {
    if let Some(hit) = memo.get(&e.ptr_key()) {
        return hit.clone();
    }
    let d = match e.node() {
        Node::Constant(_) => Expr::zero(),
        Node::Variable(n) => {
            if n.as_ref() == v {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Sum(ts) => Expr::sum(ts.iter().map(|t| diff_memo(t, v, memo)).collect()),
        Node::Product(fs) => {
            let mut terms = Vec::new();
            for (i, f) in fs.iter().enumerate() {
                let df = diff_memo(f, v, memo);
                if df.is_literal_zero() {
                    continue;
                }
                let mut factors = Vec::with_capacity(fs.len());
                for (j, g) in fs.iter().enumerate() {
                    factors.push(if i == j { df.clone() } else { g.clone() });
                }
                terms.push(Expr::product(factors));
            }
            Expr::sum(terms)
        }
        Node::Power(b, q) => {
            let db = diff_memo(b, v, memo);
            if db.is_literal_zero() {
                Expr::zero()
            } else {
                Expr::product(vec![
                    Expr::ratio(*q.numer(), *q.denom()),
                    Expr::pow(b.clone(), q - Exponent::from_integer(1)),
                    db,
                ])
            }
        }
        Node::Func(f) => match f.args.iter().position(|a| a.as_ref() == v) {
            Some(slot) => {
                let mut orders = f.orders.clone();
                orders[slot] += 1;
                Expr::func_node(FuncNode {
                    name: f.name.clone(),
                    args: f.args.clone(),
                    orders,
                })
            }
            None => Expr::zero(),
        },
    };
    memo.insert(e.ptr_key(), d.clone());
    d
}

fn subst_memo(e: &Expr, v: &str, r: &Expr, memo: &mut HashMap<usize, Expr>) -> Expr {
    if let Some(hit) = memo.get(&e.ptr_key()) {
        return hit.clone();
    }
    let out = match e.node() {
        Node::Constant(_) => e.clone(),
        Node::Variable(n) => {
            if n.as_ref() == v {
                r.clone()
            } else {
                e.clone()
            }
        }
        Node::Sum(ts) => Expr::sum(ts.iter().map(|t| subst_memo(t, v, r, memo)).collect()),
        Node::Product(fs) => {
            Expr::product(fs.iter().map(|f| subst_memo(f, v, r, memo)).collect())
        }
        Node::Power(b, q) => Expr::pow(subst_memo(b, v, r, memo), *q),
        Node::Func(f) => {
            if let Some(slot) = f.args.iter().position(|a| a.as_ref() == v) {
                let Node::Variable(new_name) = r.node() else {
                    panic!(
                        "cannot substitute non-variable expression into argument `{v}` of `{}`",
                        f.name
                    );
                };
                let mut args = f.args.clone();
                args[slot] = new_name.clone();
                assert!(
                    args.iter().filter(|a| *a == new_name).count() == 1,
                    "argument rename would collide in `{}`",
                    f.name
                );
                Expr::func_node(FuncNode {
                    name: f.name.clone(),
                    args,
                    orders: f.orders.clone(),
                })
            } else {
                e.clone()
            }
        }
    };
    memo.insert(e.ptr_key(), out.clone());
    out
}

/// 1/n! as an exact rational expression constant.
pub fn factorial_ratio(n: usize) -> Rational64 {
    assert!(n <= 20, "factorial beyond i64 range");
    let mut f: i64 = 1;
    for k in 2..=n as i64 {
        f *= k;
    }
    Rational64::new(1, f)
}

/// Coefficient of ℏⁿ in the Taylor expansion around ℏ = 0, computed as
/// (1/n!) ∂ℏⁿ e |ℏ=0 by exact differentiation followed by substitution.
///
/// The result is an expression free of ℏ provided `e` is smooth in ℏ at 0;
/// a non-smooth input (an explicit negative power of ℏ that nothing
/// cancels) survives as a zero-base power and surfaces as a domain error at
/// evaluation time.
pub fn hbar_series_coefficient(e: &Expr, n: usize) -> Expr {
    let mut d = e.clone();
    for _ in 0..n {
        d = d.differentiate(HBAR);
    }
    let at_zero = d.substitute(HBAR, &Expr::zero());
    if n >= 2 {
        let f = factorial_ratio(n);
        Expr::product(vec![Expr::ratio(*f.numer(), *f.denom()), at_zero])
    } else {
        at_zero
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hb() -> Expr {
        Expr::var(HBAR)
    }

    #[test]
    fn power_rule_on_shifted_sqrt() {
        // d/dp sqrt(lambda*p + hbar) = lambda/2 * (lambda*p + hbar)^(-1/2)
        let lam = Expr::var("lambda");
        let p = Expr::var("p");
        let base = lam.clone() * p + hb();
        let d = Expr::sqrt(base.clone()).differentiate("p");
        let expected = Expr::product(vec![
            Expr::ratio(1, 2),
            lam,
            Expr::pow(base, Exponent::new(-1, 2)),
        ]);
        assert_eq!(d, expected);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        assert!(Expr::int(7).differentiate("x").is_literal_zero());
    }

    #[test]
    fn mixed_partial() {
        // d/dp d/dx (x^2 p) = 2x
        let e = Expr::pow_int(Expr::var("x"), 2) * Expr::var("p");
        let d = e.differentiate("x").differentiate("p");
        assert_eq!(d, Expr::int(2) * Expr::var("x"));
    }

    #[test]
    fn func_derivative_increments_multi_index() {
        let w = Expr::func("W", &["x", "p"]);
        let d = w.differentiate("p").differentiate("x").differentiate("p");
        match d.node() {
            Node::Func(f) => assert_eq!(f.orders, vec![1, 2]),
            _ => panic!("expected func node"),
        }
        assert!(w.differentiate("q").is_literal_zero());
    }

    #[test]
    fn substitution_examples() {
        let lam = Expr::var("lambda");
        let p = Expr::var("p");
        let e = Expr::sqrt(lam.clone() * p.clone() + hb());
        let s = e.substitute(HBAR, &Expr::zero());
        assert_eq!(s, Expr::sqrt(lam * p.clone()));

        let xpp = Expr::var("x") + p.clone();
        let twop = Expr::int(2) * p.clone();
        assert_eq!(xpp.substitute("x", &twop), Expr::int(3) * p);
    }

    #[test]
    fn hbar_coefficients_of_sqrt() {
        // sqrt(lambda p + hbar): coeff 0 = sqrt(lambda p),
        // coeff 1 = (1/2)(lambda p)^(-1/2).
        let lam = Expr::var("lambda");
        let p = Expr::var("p");
        let e = Expr::sqrt(lam.clone() * p.clone() + hb());
        let c0 = hbar_series_coefficient(&e, 0);
        assert_eq!(c0, Expr::sqrt(lam.clone() * p.clone()));
        let c1 = hbar_series_coefficient(&e, 1);
        let expected = Expr::ratio(1, 2) * Expr::pow(lam * p, Exponent::new(-1, 2));
        assert_eq!(c1, expected);
    }

    #[test]
    fn hbar_coefficient_trivial_cases() {
        let e = Expr::var("x") + hb() * Expr::var("p");
        assert_eq!(hbar_series_coefficient(&e, 0), Expr::var("x"));
        let h2 = Expr::pow_int(hb(), 2);
        assert!(hbar_series_coefficient(&h2, 2).is_literal_one());
        assert!(hbar_series_coefficient(&h2, 1).is_literal_zero());
    }
}
