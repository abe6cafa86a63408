//! Scalar types usable as interval endpoints.
//!
//! Every arithmetic operation comes in a downward and an upward flavour so
//! that [`Interval`](crate::Interval) can round outward. Big rationals are
//! exact until their size crosses [`RATIONAL_SIZE_LIMIT`] bits, at which
//! point they are rounded outward to [`RATIONAL_PRECISION`] significant bits.
//! `f64` widens every result by one ulp.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

/// Bits (numerator + denominator) a rational may grow to before it is rounded.
pub const RATIONAL_SIZE_LIMIT: u64 = 384;
/// Significant bits kept when a rational is rounded.
pub const RATIONAL_PRECISION: u64 = 192;

pub trait Scalar:
    Clone + Debug + PartialOrd + Zero + One + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Largest representable value not above `q`.
    fn from_rational_down(q: &BigRational) -> Self;
    /// Smallest representable value not below `q`.
    fn from_rational_up(q: &BigRational) -> Self;
    /// Exact rational value of `self`.
    fn to_rational(&self) -> BigRational;

    fn add_down(&self, other: &Self) -> Self;
    fn add_up(&self, other: &Self) -> Self;
    fn mul_down(&self, other: &Self) -> Self;
    fn mul_up(&self, other: &Self) -> Self;
    /// `other` must be nonzero.
    fn div_down(&self, other: &Self) -> Self;
    fn div_up(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;

    /// Short name used in manifests.
    fn type_name() -> &'static str;

    fn is_negative_value(&self) -> bool {
        *self < Self::zero()
    }

    fn min_of(a: &Self, b: &Self) -> Self {
        if a <= b {
            a.clone()
        } else {
            b.clone()
        }
    }

    fn max_of(a: &Self, b: &Self) -> Self {
        if a >= b {
            a.clone()
        } else {
            b.clone()
        }
    }
}

fn bit_len(x: &BigInt) -> u64 {
    x.bits()
}

fn pow2(exp: u64) -> BigInt {
    BigInt::one() << exp
}

/// Rounds `q` to `RATIONAL_PRECISION` significant bits, toward -inf (`up == false`)
/// or +inf (`up == true`). Small rationals pass through unchanged.
pub fn round_rational(q: BigRational, up: bool) -> BigRational {
    let size = bit_len(q.numer()) + bit_len(q.denom());
    if size <= RATIONAL_SIZE_LIMIT || q.is_zero() {
        return q;
    }
    let (numer, denom) = (q.numer().clone(), q.denom().clone());
    // value ~ 2^e with e = bits(n) - bits(d); keep PRECISION bits after the leading one
    let e = bit_len(&numer) as i64 - bit_len(&denom) as i64;
    let shift = RATIONAL_PRECISION as i64 - e;
    let (scaled_n, scaled_d) = if shift >= 0 {
        (numer << shift as u64, denom)
    } else {
        (numer, denom << (-shift) as u64)
    };
    let (quot, rem) = scaled_n.div_mod_floor(&scaled_d);
    let mant = if up && !rem.is_zero() { quot + 1 } else { quot };
    if shift >= 0 {
        BigRational::new(mant, pow2(shift as u64))
    } else {
        BigRational::from_integer(mant * pow2((-shift) as u64))
    }
}

impl Scalar for BigRational {
    fn from_rational_down(q: &BigRational) -> Self {
        round_rational(q.clone(), false)
    }
    fn from_rational_up(q: &BigRational) -> Self {
        round_rational(q.clone(), true)
    }
    fn to_rational(&self) -> BigRational {
        self.clone()
    }
    fn add_down(&self, other: &Self) -> Self {
        round_rational(self + other, false)
    }
    fn add_up(&self, other: &Self) -> Self {
        round_rational(self + other, true)
    }
    fn mul_down(&self, other: &Self) -> Self {
        round_rational(self * other, false)
    }
    fn mul_up(&self, other: &Self) -> Self {
        round_rational(self * other, true)
    }
    fn div_down(&self, other: &Self) -> Self {
        round_rational(self / other, false)
    }
    fn div_up(&self, other: &Self) -> Self {
        round_rational(self / other, true)
    }
    fn neg(&self) -> Self {
        -self.clone()
    }
    fn type_name() -> &'static str {
        "rational"
    }
}

fn f64_down(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x.next_down()
    }
}

fn f64_up(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x.next_up()
    }
}

fn ratio_to_f64(q: &BigRational) -> f64 {
    // keep ~64 leading bits of each side, then reapply the binary exponent
    let nb = bit_len(q.numer()) as i64;
    let db = bit_len(q.denom()) as i64;
    let cut_n = (nb - 64).max(0);
    let cut_d = (db - 64).max(0);
    let nf = (q.numer() >> cut_n as u64).to_f64().unwrap_or(f64::NAN);
    let df = (q.denom() >> cut_d as u64).to_f64().unwrap_or(f64::NAN);
    let mut value = nf / df;
    let mut exp = cut_n - cut_d;
    while exp > 0 && value.is_finite() {
        let step = exp.min(512);
        value *= 2f64.powi(step as i32);
        exp -= step;
    }
    while exp < 0 && value != 0.0 {
        let step = (-exp).min(512);
        value /= 2f64.powi(step as i32);
        exp += step;
    }
    value
}

impl Scalar for f64 {
    fn from_rational_down(q: &BigRational) -> Self {
        // truncating shifts and the division can each lose an ulp or two
        let x = ratio_to_f64(q);
        f64_down(f64_down(f64_down(x)))
    }
    fn from_rational_up(q: &BigRational) -> Self {
        let x = ratio_to_f64(q);
        if q.is_positive() && x == 0.0 {
            return f64::from_bits(1);
        }
        f64_up(f64_up(f64_up(x)))
    }
    fn to_rational(&self) -> BigRational {
        BigRational::from_float(*self).unwrap_or_else(BigRational::zero)
    }
    fn add_down(&self, other: &Self) -> Self {
        f64_down(self + other)
    }
    fn add_up(&self, other: &Self) -> Self {
        f64_up(self + other)
    }
    fn mul_down(&self, other: &Self) -> Self {
        f64_down(self * other)
    }
    fn mul_up(&self, other: &Self) -> Self {
        f64_up(self * other)
    }
    fn div_down(&self, other: &Self) -> Self {
        f64_down(self / other)
    }
    fn div_up(&self, other: &Self) -> Self {
        f64_up(self / other)
    }
    fn neg(&self) -> Self {
        -*self
    }
    fn type_name() -> &'static str {
        "f64"
    }
}

/// Exact rational from a pair of integers.
pub fn ratio(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

/// `2^-exp` as an exact rational.
pub fn dyadic(exp: u64) -> BigRational {
    BigRational::new(BigInt::one(), pow2(exp))
}

/// Parses `p/q` or `p`.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    match text.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().ok()?;
            let q: BigInt = q.trim().parse().ok()?;
            if q.is_zero() {
                None
            } else {
                Some(BigRational::new(p, q))
            }
        }
        None => text.parse::<BigInt>().ok().map(BigRational::from_integer),
    }
}

/// Canonical `p/q` rendering (always with a denominator).
pub fn format_rational(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_rationals_stay_exact() {
        let a = ratio(1, 3);
        let b = ratio(1, 6);
        assert_eq!(a.add_down(&b), ratio(1, 2));
        assert_eq!(a.add_up(&b), ratio(1, 2));
    }

    #[test]
    fn large_rationals_round_outward() {
        let mut q = BigRational::zero();
        for i in 1..200i64 {
            q += ratio(1, 2 * i + 1);
        }
        let lo = round_rational(q.clone(), false);
        let hi = round_rational(q.clone(), true);
        assert!(lo <= q && q <= hi);
        assert!(lo < hi);
        assert!(bit_len(hi.denom()) <= RATIONAL_PRECISION + 8);
        let width = &hi - &lo;
        assert!(width < dyadic(RATIONAL_PRECISION - 8));
    }

    #[test]
    fn f64_encloses_third() {
        let q = ratio(1, 3);
        let lo = f64::from_rational_down(&q);
        let hi = f64::from_rational_up(&q);
        assert!(lo.to_rational() <= q && q <= hi.to_rational());
    }

    #[test]
    fn f64_tiny_positive_upper_is_positive() {
        let q = dyadic(5000);
        assert!(f64::from_rational_up(&q) > 0.0);
        assert!(f64::from_rational_down(&q) >= 0.0 || f64::from_rational_down(&q) < 1e-300);
    }

    #[test]
    fn parse_and_format() {
        assert_eq!(parse_rational("3/6"), Some(ratio(1, 2)));
        assert_eq!(parse_rational("7"), Some(ratio(7, 1)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(format_rational(&ratio(2, 4)), "1/2");
        assert_eq!(format_rational(&ratio(3, 1)), "3/1");
    }
}
