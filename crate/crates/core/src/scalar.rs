//! Real scalar abstraction for expression evaluation.
//!
//! Evaluation is generic over the underlying real type: `f64` for everyday
//! work and [`DoubleDouble`] (~31 significant digits) for the
//! finite-difference cross-check oracles, where the tiny step sizes would
//! drown an `f64` evaluation in round-off.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_bigint::{BigInt, Sign};
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{Num, One, ToPrimitive, Zero};
use twofloat::TwoFloat;

/// Real scalar usable as the base field of the evaluator.
pub trait Real:
    Num + Neg<Output = Self> + Copy + PartialOrd + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// `self^(num/den)` for positive `self`. Returns `None` when the
    /// exponent cannot be represented faithfully by this type.
    fn pow_ratio(self, num: i64, den: i64) -> Option<Self>;
    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }
    /// Exact-as-possible conversion of a big rational.
    fn from_big_ratio(r: &BigRational) -> Self {
        let n = bigint_to_real::<Self>(r.numer());
        let d = bigint_to_real::<Self>(r.denom());
        n / d
    }
}

/// Converts a `BigInt` by accumulating base-2^32 limbs, so the result is
/// exact up to the precision of `R` rather than truncated at f64.
fn bigint_to_real<R: Real>(v: &BigInt) -> R {
    let (sign, limbs) = v.to_u32_digits();
    let base = R::from_f64(4294967296.0);
    let mut acc = R::zero();
    for limb in limbs.iter().rev() {
        acc = acc * base + R::from_f64(*limb as f64);
    }
    if sign == Sign::Minus {
        acc = -acc;
    }
    acc
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn pow_ratio(self, num: i64, den: i64) -> Option<Self> {
        Some(self.powf(num as f64 / den as f64))
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn from_big_ratio(r: &BigRational) -> Self {
        // f64 has no headroom over its own conversion; use the library one.
        r.to_f64().unwrap_or(f64::NAN)
    }
}

/// Double-double scalar: an unevaluated sum of two `f64`, giving roughly
/// 31 significant decimal digits.
///
/// Only the operations that are carried out at full double-double precision
/// by the backing crate are exposed (`+ - * / sqrt powi`); transcendental
/// functions are deliberately absent, so `pow_ratio` supports half-integer
/// exponents only. That covers every exponent the friction symbols and
/// their derivatives produce.
#[derive(Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct DoubleDouble(TwoFloat);

impl DoubleDouble {
    pub fn new(v: f64) -> Self {
        DoubleDouble(TwoFloat::from(v))
    }
    pub fn hi(self) -> f64 {
        self.0.hi()
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dd({:e}+{:e})", self.0.hi(), self.0.lo())
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.hi())
    }
}

macro_rules! dd_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for DoubleDouble {
            type Output = DoubleDouble;
            fn $method(self, rhs: DoubleDouble) -> DoubleDouble {
                DoubleDouble(self.0.$method(rhs.0))
            }
        }
    };
}
dd_binop!(Add, add);
dd_binop!(Sub, sub);
dd_binop!(Mul, mul);

// The backing crate's division only carries f64 accuracy, so divide via a
// Newton-refined reciprocal built on its exact add/mul.
impl Div for DoubleDouble {
    type Output = DoubleDouble;
    fn div(self, rhs: DoubleDouble) -> DoubleDouble {
        self * rhs.recip_full()
    }
}

impl Rem for DoubleDouble {
    type Output = DoubleDouble;
    fn rem(self, rhs: DoubleDouble) -> DoubleDouble {
        // Unused by the evaluator; present only to satisfy `Num`.
        DoubleDouble::new(self.to_f64() % rhs.to_f64())
    }
}

impl DoubleDouble {
    /// 1/self at full double-double precision: seed from f64, one Newton
    /// step `y(2 - xy)` squares the accuracy to ~1e-32.
    fn recip_full(self) -> DoubleDouble {
        let y0 = DoubleDouble::new(1.0 / (self.0.hi() + self.0.lo()));
        let two = DoubleDouble::new(2.0);
        let y1 = y0 * (two - self * y0);
        y1 * (two - self * y1)
    }
}

impl Neg for DoubleDouble {
    type Output = DoubleDouble;
    fn neg(self) -> DoubleDouble {
        DoubleDouble(-self.0)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble::new(0.0)
    }
    fn is_zero(&self) -> bool {
        self.0 == TwoFloat::from(0.0)
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        DoubleDouble::new(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(str: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        <f64 as Num>::from_str_radix(str, radix).map(DoubleDouble::new)
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        DoubleDouble::new(v)
    }
    fn to_f64(self) -> f64 {
        self.0.hi() + self.0.lo()
    }
    fn sqrt(self) -> Self {
        DoubleDouble(self.0.sqrt())
    }
    fn powi(self, n: i32) -> Self {
        if n < 0 {
            DoubleDouble(self.0.powi(-n)).recip_full()
        } else {
            DoubleDouble(self.0.powi(n))
        }
    }
    fn pow_ratio(self, num: i64, den: i64) -> Option<Self> {
        match den {
            1 => Some(self.powi(i32::try_from(num).ok()?)),
            2 => Some(self.sqrt().powi(i32::try_from(num).ok()?)),
            _ => None,
        }
    }
    fn abs(self) -> Self {
        DoubleDouble(self.0.abs())
    }
}

/// Integer power of a complex number by binary exponentiation.
/// `n < 0` inverts; the caller must rule out a zero base beforehand.
pub fn complex_powi<R: Real>(z: Complex<R>, n: i64) -> Complex<R> {
    if n == 0 {
        return Complex::new(R::one(), R::zero());
    }
    let mut base = if n < 0 {
        Complex::new(R::one(), R::zero()) / z
    } else {
        z
    };
    let mut exp = n.unsigned_abs();
    let mut acc = Complex::new(R::one(), R::zero());
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base;
        }
        base = base * base;
        exp >>= 1;
    }
    acc
}

/// |z| for generic real component type.
pub fn complex_abs<R: Real>(z: Complex<R>) -> R {
    (z.re * z.re + z.im * z.im).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_double_keeps_sub_f64_residuals() {
        let one = DoubleDouble::new(1.0);
        let tiny = DoubleDouble::new(1e-25);
        let r = one + tiny - one;
        assert!((r.to_f64() - 1e-25).abs() < 1e-40);
    }

    #[test]
    fn double_double_sqrt_is_full_precision() {
        let two = DoubleDouble::new(2.0);
        let s = two.sqrt();
        let resid = s * s - two;
        assert!(resid.to_f64().abs() < 1e-30);
    }

    #[test]
    fn pow_ratio_half_integer() {
        let x = DoubleDouble::new(5.0);
        let v = x.pow_ratio(-3, 2).unwrap();
        let check = v * v * x.powi(3) - DoubleDouble::new(1.0);
        assert!(check.to_f64().abs() < 1e-29);
    }

    #[test]
    fn big_ratio_conversion_exceeds_f64() {
        // 2^90 + 1 is not representable in f64; double-double holds it.
        let big: BigInt = BigInt::from(1u8) << 90;
        let r = BigRational::new(big.clone() + 1, big);
        let dd = DoubleDouble::from_big_ratio(&r);
        let diff = dd - DoubleDouble::new(1.0);
        let expected = 2f64.powi(-90);
        assert!((diff.to_f64() / expected - 1.0).abs() < 1e-10);
    }

    #[test]
    fn complex_powi_negative() {
        let z = Complex::new(2.0f64, 1.0);
        let w = complex_powi(z, -3) * complex_powi(z, 3);
        assert!((w.re - 1.0).abs() < 1e-14 && w.im.abs() < 1e-14);
    }
}
