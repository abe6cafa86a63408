//! Gap measures: finite moment up to degree `m`, infinite from `m + 1` on.
//!
//! Atoms sit at `a_i = θ + (i - 1) + ξ/(ξ + 1)` with masses
//! `scale / (i (i + 1) a_i^m)`. The degree-`m` moment telescopes: the first
//! `N` terms sum to `scale · N/(N + 1)` and the rest to `scale/(N + 1)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use super::special;
use super::{Atom, Budget, DivergenceCertificate, MeasureResult, MeasureSource, MomentValue, OriginKey, TailBound};
use crate::construction::allocator;
use crate::interval::Interval;
use crate::scalar::Scalar;

/// Fixed-point bits for plain partial sums.
const PARTIAL_BITS: u64 = 256;

#[derive(Debug, Clone)]
pub struct GapMeasure {
    m: u32,
    theta: u64,
    xi: u128,
    scale: BigRational,
    key: String,
}

/// Unscaled gap measure with allocation index `xi` and integral floor `theta`.
pub fn gap_measure(m: u32, theta: u64, xi: u128) -> GapMeasure {
    GapMeasure::new(m, theta, xi, BigRational::one(), format!("gap:{xi}"))
}

fn big(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

// powers of a reduced fraction stay reduced, so skip the gcd
fn rpow(base: &BigRational, exp: i64) -> BigRational {
    let k = exp.unsigned_abs() as u32;
    let (num, den) = (base.numer().pow(k), base.denom().pow(k));
    if exp < 0 {
        if num.is_negative() {
            BigRational::new_raw(-den, -num)
        } else {
            BigRational::new_raw(den, num)
        }
    } else {
        BigRational::new_raw(num, den)
    }
}

impl GapMeasure {
    pub fn new(m: u32, theta: u64, xi: u128, scale: BigRational, key: String) -> Self {
        assert!(theta >= 1, "support floor must be at least 1");
        assert!(scale.is_positive(), "gap scale must be positive");
        Self { m, theta, xi, scale, key }
    }

    pub fn finite_degree(&self) -> u32 {
        self.m
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }

    pub fn scale(&self) -> &BigRational {
        &self.scale
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    /// `a_i`, `i >= 1`.
    pub fn support(&self, i: u64) -> BigRational {
        allocator::support(self.theta, self.xi, i)
    }

    /// [`Self::alpha`] built without a gcd: `((θ-1)(ξ+1) + ξ) / (ξ+1)` is already reduced.
    fn alpha_raw(&self) -> BigRational {
        let q = BigInt::from(self.xi) + 1;
        BigRational::new_raw(BigInt::from(self.theta - 1) * &q + BigInt::from(self.xi), q)
    }

    /// `a_i - i`.
    fn alpha(&self) -> BigRational {
        big(self.theta - 1) + allocator::offset(self.xi)
    }

    pub fn mass(&self, i: u64) -> BigRational {
        self.term(0, i)
    }

    /// `mass_i · a_i^degree`.
    pub fn term(&self, degree: i32, i: u64) -> BigRational {
        let a = self.support(i);
        &self.scale * rpow(&a, degree as i64 - self.m as i64) / big(i * (i + 1))
    }

    /// Exact sum of the first `n` terms of the degree-`degree` series.
    pub fn partial_sum(&self, degree: i32, n: u64) -> BigRational {
        if degree == self.m as i32 {
            return &self.scale * BigRational::new(BigInt::from(n), BigInt::from(n + 1));
        }
        (1..=n).fold(BigRational::zero(), |acc, i| acc + self.term(degree, i))
    }

    /// Bounds `(lo, hi)` on the sum of all terms after the first `n`, or `None` past degree `m`.
    pub fn tail_bounds(&self, degree: i32, n: u64) -> Option<(BigRational, BigRational)> {
        let m = self.m as i32;
        if degree > m {
            return None;
        }
        if degree == m {
            let t = &self.scale / big(n + 1);
            return Some((t.clone(), t));
        }
        let e = (m - degree) as i64;
        let alpha = self.alpha();
        let quarter = BigRational::new(BigInt::from(1), BigInt::from(4));
        let gamma = if alpha < quarter { alpha.clone() } else { quarter };
        let nn = big(n);
        let e1 = big(e as u64 + 1);
        // monotone bound on the remaining terms
        let by_floor = rpow(&self.support(n + 1), -e) / big(n + 1);
        // integral comparison, (i + γ)^2 <= i (i + 1)
        let shifted = &nn + &gamma;
        let hi = if shifted.is_zero() {
            by_floor
        } else {
            let by_integral = rpow(&shifted, -(e + 1)) / &e1;
            if by_floor < by_integral { by_floor } else { by_integral }
        };
        let lo = rpow(&(&nn + big(2) + &alpha), -(e + 1)) / &e1;
        Some((&self.scale * lo, &self.scale * hi))
    }

    /// `(numerator, denominator)` of the unscaled term `a_i^degree / (i (i + 1) a_i^m)`.
    fn term_parts(&self, degree: i32, i: u64) -> (BigInt, BigInt) {
        let q: BigInt = BigInt::from(self.xi) + 1;
        let p = BigInt::from(self.theta + i - 1) * &q + BigInt::from(self.xi);
        let e = degree - self.m as i32;
        let (num, den) = if e >= 0 { (p, q) } else { (q, p) };
        let k = e.unsigned_abs();
        (num.pow(k), den.pow(k) * BigInt::from(i) * BigInt::from(i + 1))
    }

    /// Adds unscaled terms `from..=to` to a fixed-point accumulator on the grid `2^-bits`.
    fn accumulate(&self, degree: i32, from: u64, to: u64, bits: u64, acc: &mut (BigInt, BigInt)) {
        for i in from..=to {
            let (num, den) = self.term_parts(degree, i);
            let (quot, rem) = (num << bits).div_mod_floor(&den);
            if !rem.is_zero() {
                acc.1 += 1;
            }
            acc.0 += &quot;
            acc.1 += quot;
        }
    }

    /// Scaled enclosure of an accumulator plus a scaled tail `[lo, hi]`.
    fn close<T: Scalar>(&self, acc: &(BigInt, BigInt), bits: u64, tail: (BigRational, BigRational)) -> Interval<T> {
        let unit = BigRational::new(BigInt::one(), BigInt::one() << bits);
        let lo = BigRational::from_integer(acc.0.clone()) * &unit * &self.scale + tail.0;
        let hi = BigRational::from_integer(acc.1.clone()) * &unit * &self.scale + tail.1;
        Interval::from_rationals(&lo, &hi)
    }

    fn partial_interval<T: Scalar>(&self, degree: i32, n: u64) -> Interval<T> {
        if degree == self.m as i32 {
            return Interval::from_rational(&self.partial_sum(degree, n));
        }
        let mut acc = (BigInt::zero(), BigInt::zero());
        self.accumulate(degree, 1, n, PARTIAL_BITS, &mut acc);
        self.close(&acc, PARTIAL_BITS, (BigRational::zero(), BigRational::zero()))
    }

    /// Two-sided enclosure from the first `n` atoms plus the tail bounds.
    pub fn enclosure<T: Scalar>(&self, degree: i32, n: u64) -> Option<Interval<T>> {
        let (lo, hi) = self.tail_bounds(degree, n)?;
        Some(&self.partial_interval::<T>(degree, n) + &Interval::from_rationals(&lo, &hi))
    }

    /// Sharp enclosure using at most `horizon` atoms, stopping early once the
    /// width is at most `target`. Returns the enclosure and the atom count used.
    pub fn adaptive_enclosure<T: Scalar>(&self, degree: i32, target: &BigRational, horizon: u64) -> Option<(Interval<T>, u64)> {
        if degree == self.m as i32 {
            return Some((Interval::from_rational(&self.scale), 0));
        }
        if degree > self.m as i32 {
            return None;
        }
        let horizon = horizon.max(1);
        let e = (self.m as i32 - degree) as u32;
        let target_bits = (target.denom().bits() as i64 - target.numer().bits() as i64).max(0) as u64;
        let bits = target_bits + 24;
        let units = (target.numer() << bits).div_floor(target.denom());
        let alpha = self.alpha_raw();
        let mut acc = (BigInt::zero(), BigInt::zero());
        let mut done = 0;
        let mut checkpoint = 1;
        loop {
            let upto = checkpoint.min(horizon);
            self.accumulate(degree, done + 1, upto, bits, &mut acc);
            done = upto;
            let (lo, hi) = special::gap_tail_grid(&alpha, e, done, bits);
            if &hi - &lo <= units || done == horizon {
                let total = (&acc.0 + lo, &acc.1 + hi);
                return Some((self.close(&total, bits, (BigRational::zero(), BigRational::zero())), done));
            }
            checkpoint *= 2;
        }
    }

    /// Harmonic-minorant certificate for a degree above `m`.
    pub fn certificate(&self, degree: i32) -> Option<DivergenceCertificate> {
        if degree <= self.m as i32 {
            return None;
        }
        let this = self.clone();
        Some(DivergenceCertificate::new(
            self.scale.clone(),
            1,
            format!("{}: a_i^{}/(i(i+1)) >= 1/(i+1)", self.key, degree - self.m as i32),
            move |i| this.term(degree, i),
        ))
    }
}

impl<T: Scalar> MeasureSource<T> for GapMeasure {
    fn support_floor(&self) -> BigRational {
        big(self.theta)
    }

    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>> {
        let i = index as u64 + 1;
        Ok(Some(Atom {
            support: self.support(i),
            mass: Interval::from_rational(&self.mass(i)),
            origin: OriginKey { key: self.key.clone(), index: i },
        }))
    }

    /// `[S_N, S_N + tail]` with `N = horizon`, so the partial sum is always enclosed.
    fn moment(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        let n = budget.horizon as u64;
        match self.tail_bounds(degree, n) {
            None => Ok(MomentValue::Divergent(self.certificate(degree).expect("degree above m"))),
            Some((_, hi)) => {
                let partial = self.partial_interval::<T>(degree, n);
                let tail = Interval::from_rationals(&BigRational::zero(), &hi);
                Ok(MomentValue::Finite(&partial + &tail))
            }
        }
    }

    fn tail_bound(&self, degree: i32, n: usize) -> Option<TailBound<T>> {
        Some(match self.tail_bounds(degree, n as u64) {
            Some((lo, hi)) => TailBound::Bounded(Interval::from_rationals(&lo, &hi)),
            None => TailBound::Infinite,
        })
    }

    fn mass_by_allocation(&self, support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        let theta = self.theta;
        let decoded = allocator::decode_support(support, |_| Some(theta));
        Some(Ok(match decoded {
            Some((xi, i)) if xi == self.xi => Interval::from_rational(&self.mass(i)),
            _ => Interval::zero(),
        }))
    }

    fn describe(&self) -> String {
        format!("gap(m={}, θ={}, ξ={}, scale={})", self.m, self.theta, self.xi, self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DiscreteMeasure;
    use crate::scalar::ratio;
    use proptest::prelude::*;

    type Q = BigRational;

    #[test]
    fn first_atoms() {
        let g = gap_measure(1, 1, 0);
        assert_eq!(g.support(1), ratio(1, 1));
        assert_eq!(g.support(2), ratio(2, 1));
        assert_eq!(g.mass(1), ratio(1, 2));
        assert_eq!(g.mass(2), ratio(1, 12));
    }

    #[test]
    fn telescoping_partial_sums() {
        let g = gap_measure(1, 1, 0);
        assert_eq!(g.partial_sum(1, 3), ratio(3, 4));
        assert_eq!(g.partial_sum(2, 3), ratio(13, 12));
        // direct summation agrees with the closed form
        let direct = (1..=3).fold(Q::zero(), |a, i| a + g.term(1, i));
        assert_eq!(direct, ratio(3, 4));
    }

    #[test]
    fn public_moment_encloses_one() {
        let mu: DiscreteMeasure<Q> = DiscreteMeasure::from_source(gap_measure(1, 1, 0));
        let v = mu.moment(1, &ratio(1, 1000), 2048).unwrap();
        let iv = v.finite().unwrap();
        assert!(iv.contains(&ratio(1, 1)));
        assert!(iv.width() <= ratio(1, 1000));
        let div = mu.moment(2, &ratio(1, 1000), 16).unwrap();
        let cert = div.certificate().unwrap();
        assert_eq!(cert.coefficient(), &ratio(1, 1));
        assert_eq!(cert.offset(), 1);
    }

    #[test]
    fn total_mass_below_one() {
        let mu: DiscreteMeasure<Q> = DiscreteMeasure::from_source(gap_measure(1, 1, 0));
        let v = mu.total_mass(&ratio(1, 100), 512).unwrap();
        assert!(v.finite().unwrap().hi() <= &ratio(1, 1));
        let flat: DiscreteMeasure<Q> = DiscreteMeasure::from_source(gap_measure(0, 1, 0));
        let v = flat.moment(0, &ratio(1, 100), 512).unwrap();
        assert!(v.finite().unwrap().contains(&ratio(1, 1)));
    }

    #[test]
    fn sharp_enclosure_is_tight() {
        let g = GapMeasure::new(3, 4, 7, ratio(1, 8), "t".into());
        let (iv, used): (Interval<Q>, u64) = g.adaptive_enclosure(1, &ratio(1, 1 << 30), 4096).unwrap();
        assert!(iv.width() <= ratio(1, 1 << 30));
        assert!(used < 4096);
    }

    proptest! {
        #[test]
        fn tails_bracket_long_partial_sums(m in 1u32..4, theta in 1u64..5, xi in 0u128..20, d in -1i32..3, n in 1u64..20) {
            prop_assume!(d < m as i32);
            let g = GapMeasure::new(m, theta, xi, ratio(1, 1), "p".into());
            let (lo, hi) = g.tail_bounds(d, n).unwrap();
            prop_assert!(lo <= hi);
            // the tail after n dominates the next 200 terms
            let chunk = (n + 1..=n + 200).fold(Q::zero(), |a, i| a + g.term(d, i));
            prop_assert!(chunk <= hi);
            // both bracket the same true tail
            let (lo2, hi2) = g.tail_bounds(d, n + 200).unwrap();
            prop_assert!(&chunk + &lo2 <= hi);
            prop_assert!(&chunk + &hi2 >= lo);
        }

        #[test]
        fn enclosures_nest(m in 1u32..4, xi in 0u128..20, d in -1i32..3, n in 1u64..40) {
            prop_assume!(d <= m as i32);
            let g = GapMeasure::new(m, 1, xi, ratio(1, 1), "p".into());
            let a: Interval<Q> = g.enclosure(d, n).unwrap();
            let b: Interval<Q> = g.enclosure(d, n + 1).unwrap();
            prop_assert!(a.encloses(&b));
        }

        #[test]
        fn public_moment_contains_partial_sum(m in 1u32..5, n in 1usize..64) {
            let g = gap_measure(m, 1, 0);
            let exact = g.partial_sum(m as i32, n as u64);
            let v = MeasureSource::<Q>::moment(&g, m as i32, &Budget::new(n, ratio(1, 1))).unwrap();
            prop_assert!(v.finite().unwrap().contains(&exact));
        }
    }
}
