use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_rational::BigRational;

use crate::scalar::{format_rational, Scalar};

/// Closed interval `[lo, hi]` with outward-rounded arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval<T> {
    lo: T,
    hi: T,
}

impl<T: Scalar> Interval<T> {
    /// Panics if `lo > hi`.
    pub fn new(lo: T, hi: T) -> Self {
        assert!(lo <= hi, "inverted interval {lo:?} > {hi:?}");
        Self { lo, hi }
    }

    pub fn point(value: T) -> Self {
        Self { lo: value.clone(), hi: value }
    }

    pub fn zero() -> Self {
        Self::point(T::zero())
    }

    pub fn one() -> Self {
        Self::point(T::one())
    }

    /// Tightest enclosure of an exact rational.
    pub fn from_rational(q: &BigRational) -> Self {
        Self { lo: T::from_rational_down(q), hi: T::from_rational_up(q) }
    }

    pub fn from_rationals(lo: &BigRational, hi: &BigRational) -> Self {
        Self::new(T::from_rational_down(lo), T::from_rational_up(hi))
    }

    pub fn from_int(value: i64) -> Self {
        Self::from_rational(&BigRational::from_integer(value.into()))
    }

    /// `[0, bound]`.
    pub fn up_to(bound: T) -> Self {
        Self::new(T::zero(), bound)
    }

    pub fn lo(&self) -> &T {
        &self.lo
    }

    pub fn hi(&self) -> &T {
        &self.hi
    }

    pub fn width(&self) -> T {
        self.hi.add_up(&self.lo.neg())
    }

    pub fn contains(&self, value: &T) -> bool {
        self.lo <= *value && *value <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(&T::zero())
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn encloses(&self, other: &Self) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn is_positive(&self) -> bool {
        self.lo > T::zero()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lo >= T::zero()
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self { lo: T::min_of(&self.lo, &other.lo), hi: T::max_of(&self.hi, &other.hi) }
    }

    /// `None` when the intervals are disjoint.
    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let lo = T::max_of(&self.lo, &other.lo);
        let hi = T::min_of(&self.hi, &other.hi);
        (lo <= hi).then_some(Self { lo, hi })
    }

    /// Integer power; negative exponents require an interval excluding zero.
    pub fn powi(&self, exp: i32) -> Self {
        if exp == 0 {
            return Self::one();
        }
        if exp < 0 {
            return Self::one() / self.powi(-exp);
        }
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut e = exp as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = base.square();
            }
        }
        acc
    }

    pub fn square(&self) -> Self {
        if self.lo >= T::zero() {
            Self { lo: self.lo.mul_down(&self.lo), hi: self.hi.mul_up(&self.hi) }
        } else if self.hi <= T::zero() {
            Self { lo: self.hi.mul_down(&self.hi), hi: self.lo.mul_up(&self.lo) }
        } else {
            let a = self.lo.mul_up(&self.lo);
            let b = self.hi.mul_up(&self.hi);
            Self { lo: T::zero(), hi: T::max_of(&a, &b) }
        }
    }

    pub fn scale_rational(&self, factor: &BigRational) -> Self {
        self * &Self::from_rational(factor)
    }

    /// Division that reports a divisor containing zero instead of panicking.
    pub fn checked_div(&self, other: &Self) -> Option<Self> {
        if other.contains_zero() {
            None
        } else {
            Some(self / other)
        }
    }

    pub fn to_rationals(&self) -> (BigRational, BigRational) {
        (self.lo.to_rational(), self.hi.to_rational())
    }

    /// `["p/q","p/q"]` rendering of the exact endpoints.
    pub fn to_json(&self) -> serde_json::Value {
        let (lo, hi) = self.to_rationals();
        serde_json::json!([format_rational(&lo), format_rational(&hi)])
    }

    pub fn map_scalar<U: Scalar>(&self) -> Interval<U> {
        let (lo, hi) = self.to_rationals();
        Interval::from_rationals(&lo, &hi)
    }

    pub fn sum<'a, I: IntoIterator<Item = &'a Self>>(items: I) -> Self {
        items.into_iter().fold(Self::zero(), |acc, x| &acc + x)
    }

    pub fn mid_f64(&self) -> f64 {
        let lo = self.lo.to_f64().unwrap_or(f64::NAN);
        let hi = self.hi.to_f64().unwrap_or(f64::NAN);
        0.5 * (lo + hi)
    }
}

impl<T: Scalar> fmt::Display for Interval<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{:.6e}, {:.6e}]",
            self.lo.to_f64().unwrap_or(f64::NAN),
            self.hi.to_f64().unwrap_or(f64::NAN)
        )
    }
}

impl<'a, T: Scalar> Add<&'a Interval<T>> for &'a Interval<T> {
    type Output = Interval<T>;
    fn add(self, rhs: &'a Interval<T>) -> Interval<T> {
        Interval { lo: self.lo.add_down(&rhs.lo), hi: self.hi.add_up(&rhs.hi) }
    }
}

impl<'a, T: Scalar> Sub<&'a Interval<T>> for &'a Interval<T> {
    type Output = Interval<T>;
    fn sub(self, rhs: &'a Interval<T>) -> Interval<T> {
        Interval { lo: self.lo.add_down(&rhs.hi.neg()), hi: self.hi.add_up(&rhs.lo.neg()) }
    }
}

impl<'a, T: Scalar> Mul<&'a Interval<T>> for &'a Interval<T> {
    type Output = Interval<T>;
    fn mul(self, rhs: &'a Interval<T>) -> Interval<T> {
        let zero = T::zero();
        if self.lo >= zero && rhs.lo >= zero {
            return Interval { lo: self.lo.mul_down(&rhs.lo), hi: self.hi.mul_up(&rhs.hi) };
        }
        let pairs = [(&self.lo, &rhs.lo), (&self.lo, &rhs.hi), (&self.hi, &rhs.lo), (&self.hi, &rhs.hi)];
        let mut lo = pairs[0].0.mul_down(pairs[0].1);
        let mut hi = pairs[0].0.mul_up(pairs[0].1);
        for (a, b) in &pairs[1..] {
            lo = T::min_of(&lo, &a.mul_down(b));
            hi = T::max_of(&hi, &a.mul_up(b));
        }
        Interval { lo, hi }
    }
}

impl<'a, T: Scalar> Div<&'a Interval<T>> for &'a Interval<T> {
    type Output = Interval<T>;
    /// Panics if the divisor contains zero; use `checked_div` otherwise.
    fn div(self, rhs: &'a Interval<T>) -> Interval<T> {
        assert!(!rhs.contains_zero(), "interval division by an interval containing zero");
        let zero = T::zero();
        if self.lo >= zero && rhs.lo > zero {
            return Interval { lo: self.lo.div_down(&rhs.hi), hi: self.hi.div_up(&rhs.lo) };
        }
        let pairs = [(&self.lo, &rhs.lo), (&self.lo, &rhs.hi), (&self.hi, &rhs.lo), (&self.hi, &rhs.hi)];
        let mut lo = pairs[0].0.div_down(pairs[0].1);
        let mut hi = pairs[0].0.div_up(pairs[0].1);
        for (a, b) in &pairs[1..] {
            lo = T::min_of(&lo, &a.div_down(b));
            hi = T::max_of(&hi, &a.div_up(b));
        }
        Interval { lo, hi }
    }
}

impl<T: Scalar> Add for Interval<T> {
    type Output = Interval<T>;
    fn add(self, rhs: Self) -> Self {
        &self + &rhs
    }
}

impl<T: Scalar> Sub for Interval<T> {
    type Output = Interval<T>;
    fn sub(self, rhs: Self) -> Self {
        &self - &rhs
    }
}

impl<T: Scalar> Mul for Interval<T> {
    type Output = Interval<T>;
    fn mul(self, rhs: Self) -> Self {
        &self * &rhs
    }
}

impl<T: Scalar> Div for Interval<T> {
    type Output = Interval<T>;
    fn div(self, rhs: Self) -> Self {
        &self / &rhs
    }
}

impl<T: Scalar> Neg for Interval<T> {
    type Output = Interval<T>;
    fn neg(self) -> Self {
        Interval { lo: self.hi.neg(), hi: self.lo.neg() }
    }
}

impl<T: Scalar> Default for Interval<T> {
    fn default() -> Self {
        Self::zero()
    }
}
