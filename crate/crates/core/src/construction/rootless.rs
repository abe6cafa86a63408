//! One step of the rootless chain: the vertex `x_j` above `x_{j-1}`.
//!
//! The children of `x_j` are `w_0 = x_{j-1}` and fresh siblings `w_i`,
//! `i >= 1`, each the root of its own rooted construction with floor
//! `θ_i = (i + 1)^2` (and `θ_0 = 1`). With `M_d(μ) = ∫ s^d dμ`:
//!
//! * `λ̃²_i = 1 / (θ_i M_{n-1}(μ_{w_i}))`,
//! * `ζ = Σ_i λ̃²_i M_{-1}(μ_{w_i})`, each term at most `θ_i^{-(n+1)}`,
//! * `λ²_i = λ̃²_i / ζ` and `μ_{x_j} = Σ_i λ²_i · (1/s) μ_{w_i}`.
//!
//! Since `λ²_i M_{n-1}(μ_{w_i}) = 1/(ζ θ_i)`, the degree-`n` moment of
//! `μ_{x_j}` is `ζ^{-1} Σ 1/θ_i`, while every term of the degree-`n+1`
//! series is at least `1/ζ`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;

use super::allocator::{decode_fraction, AllocationKey, SubtreeId};
use super::context::{Effort, SubtreeContext};
use crate::interval::Interval;
use crate::measure::{
    harmonic_push, scaled_mixture, Budget, DiscreteMeasure, DivergenceCertificate, MeasureResult,
    TailEstimate,
};
use crate::scalar::{round_rational, Scalar};

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn qpow(base: &BigRational, exp: u32) -> BigRational {
    (0..exp).fold(BigRational::one(), |acc, _| acc * base)
}

/// Upper bound of `Σ_{k > K} k^{-p}` for `p >= 2`, `K >= 1`.
pub fn power_tail(k: u64, p: u32) -> BigRational {
    qpow(&q(k as i64, 1), p - 1).recip() / q(p as i64 - 1, 1)
}

/// Enclosure of `Σ_{k > K} 1/k^2`, `K >= 1`.
pub fn inverse_square_tail(k: u64) -> (BigRational, BigRational) {
    let hi = q(2, 2 * k as i64 + 1);
    let half_below = q(2 * k as i64 - 1, 2);
    let lo = &hi - (qpow(&half_below, 3) * q(12, 1)).recip();
    (lo, hi)
}

/// `θ_i`.
pub fn theta(i: u64) -> u64 {
    if i == 0 {
        1
    } else {
        (i + 1) * (i + 1)
    }
}

/// What sits below `x_j`.
#[derive(Clone)]
pub enum Below<T: Scalar> {
    Anchor(Arc<SubtreeContext<T>>),
    Chain(Arc<ChainLevel<T>>),
}

impl<T: Scalar> Below<T> {
    fn mu(&self) -> MeasureResult<DiscreteMeasure<T>> {
        match self {
            Below::Anchor(ctx) => Ok(ctx.mu(&[])),
            Below::Chain(level) => level.measure(),
        }
    }
}

pub struct ChainLevel<T: Scalar> {
    j: u64,
    n: u32,
    budget: Budget,
    below: Below<T>,
    siblings: Mutex<HashMap<u64, Arc<SubtreeContext<T>>>>,
    zeta: OnceLock<MeasureResult<(Interval<T>, usize)>>,
    measure: OnceLock<MeasureResult<DiscreteMeasure<T>>>,
}

impl<T: Scalar> ChainLevel<T> {
    pub fn new(j: u64, n: u32, budget: Budget, below: Below<T>) -> Arc<Self> {
        assert!(j >= 1);
        Arc::new(Self {
            j,
            n,
            budget,
            below,
            siblings: Mutex::new(HashMap::new()),
            zeta: OnceLock::new(),
            measure: OnceLock::new(),
        })
    }

    pub fn index(&self) -> u64 {
        self.j
    }

    /// Rooted context of sibling `i >= 1`.
    pub fn sibling(&self, i: u64) -> Arc<SubtreeContext<T>> {
        assert!(i >= 1);
        let mut map = self.siblings.lock().unwrap();
        map.entry(i)
            .or_insert_with(|| {
                SubtreeContext::new(SubtreeId { chain: self.j, sibling: i }, self.n, Effort::for_budget(&self.budget))
            })
            .clone()
    }

    /// `μ_{w_i}` (not pushed).
    pub fn child_measure(&self, i: u64) -> MeasureResult<DiscreteMeasure<T>> {
        if i == 0 {
            self.below.mu()
        } else {
            Ok(self.sibling(i).mu(&[]))
        }
    }

    fn child_moment(&self, i: u64, d: i32, budget: &Budget) -> MeasureResult<Interval<T>> {
        self.child_measure(i)?.moment_raw(d, budget)?.expect_finite("chain child moment")
    }

    /// `λ̃²_i M_{-1}(μ_{w_i})`, with sibling integrals only as sharp as a
    /// term of size `θ_i^{-(n+1)}` out of `count` needs.
    fn zeta_term(&self, i: u64, count: u64) -> MeasureResult<Interval<T>> {
        let th = Interval::from_int(theta(i) as i64);
        if i == 0 {
            let m_low = self.child_moment(i, -1, &self.budget)?;
            let m_top = self.child_moment(i, self.n as i32 - 1, &self.budget)?;
            return Ok(&m_low / &(&th * &m_top));
        }
        let full = Effort::for_budget(&self.budget);
        let tol = &self.budget.tolerance;
        let tol_bits = tol.denom().bits() as i64 - tol.numer().bits() as i64;
        let count_bits = 64 - count.leading_zeros() as i64;
        let theta_bits = 63 - theta(i).leading_zeros() as i64;
        let bits = (tol_bits + count_bits + 5 - (self.n as i64 + 1) * theta_bits).clamp(8, full.bits as i64);
        let effort = Effort { bits: bits as u32, ..full };
        // the normalizer of μ_{w_i} cancels
        let ctx = self.sibling(i);
        let low = ctx.integral(&[], -1, effort)?;
        let top = ctx.integral(&[], self.n as i32 - 1, effort)?;
        Ok(&low / &(&th * &top))
    }

    /// `ζ` and the number of terms summed.
    pub fn zeta(&self) -> MeasureResult<Interval<T>> {
        self.zeta_with_count().map(|(z, _)| z)
    }

    pub fn zeta_with_count(&self) -> MeasureResult<(Interval<T>, usize)> {
        self.zeta
            .get_or_init(|| {
                let target = &self.budget.tolerance / q(4, 1);
                let p = 2 * (self.n + 1);
                // terms i >= K are at most (i+1)^{-p}
                let mut k = 8u64;
                while power_tail(k, p) > target && (k as usize) < self.budget.max_components {
                    k *= 2;
                }
                let terms: Vec<MeasureResult<Interval<T>>> = (0..k).into_par_iter().map(|i| self.zeta_term(i, k)).collect();
                let mut sum = Interval::from_rationals(&BigRational::zero(), &power_tail(k, p));
                for t in terms {
                    sum = &sum + &t?;
                }
                Ok((sum, k as usize))
            })
            .clone()
    }

    /// `λ̃²_i`.
    pub fn lambda_tilde_sq(&self, i: u64) -> MeasureResult<Interval<T>> {
        let m_top = self.child_moment(i, self.n as i32 - 1, &self.budget)?;
        let th = Interval::from_int(theta(i) as i64);
        Ok(&Interval::one() / &(&th * &m_top))
    }

    /// `λ²_{w_i}`.
    pub fn lambda_sq(&self, i: u64) -> MeasureResult<Interval<T>> {
        Ok(&self.lambda_tilde_sq(i)? / &self.zeta()?)
    }

    /// Upper bound of the `μ_{x_j}` mass carried by children `w_i`, `i >= after >= 1`.
    pub fn mass_tail(&self, after: u64) -> MeasureResult<BigRational> {
        let zeta = self.zeta()?;
        Ok(round_rational(power_tail(after.max(1), 2 * (self.n + 1)) / zeta.lo().to_rational(), true))
    }

    /// Which child owns a support: `Some(i)` for `w_i`, `None` if no atom of `μ_{x_j}` sits there.
    pub fn owner(&self, support: &BigRational) -> Option<u64> {
        let (xi, _) = decode_fraction(support)?;
        let key = AllocationKey::from_index(xi);
        let s = key.subtree;
        if s.chain == self.j && s.sibling >= 1 {
            Some(s.sibling)
        } else if s.chain < self.j {
            Some(0)
        } else {
            None
        }
    }

    fn certificate(&self, zeta_hi: BigRational) -> DivergenceCertificate {
        let c = zeta_hi.recip();
        let term = c.clone();
        DivergenceCertificate::new(
            c,
            1,
            format!("children of x_{}: λ²_i ∫ s^n dμ_(w_i) >= 1/ζ", self.j),
            move |_| term.clone(),
        )
    }

    /// Coefficient tail `Σ_{i >= after} λ²_i M_{d-1}(μ_{w_i})`.
    fn tail(&self, after: usize, degree: i32, zeta: &Interval<T>) -> TailEstimate<T> {
        let n = self.n as i32;
        let after = after.max(1) as u64;
        if degree > n {
            return TailEstimate::Divergent(self.certificate(zeta.hi().to_rational()));
        }
        let inv = &Interval::one() / zeta;
        if degree == n {
            // exactly ζ^{-1} Σ_{i >= after} 1/θ_i = ζ^{-1} Σ_{k > after} 1/k^2
            let (lo, hi) = inverse_square_tail(after);
            return TailEstimate::Bounded(&inv * &Interval::from_rationals(&lo, &hi));
        }
        // supports of μ_{w_i} are >= θ_i, so each term is at most θ_i^{d-n-1}/ζ
        let p = 2 * (n + 1 - degree) as u32;
        let bound = Interval::from_rationals(&BigRational::zero(), &power_tail(after, p));
        TailEstimate::Bounded(&inv * &bound)
    }

    /// `μ_{x_j}`.
    pub fn measure(self: &Arc<Self>) -> MeasureResult<DiscreteMeasure<T>> {
        self.measure
            .get_or_init(|| {
                let zeta = self.zeta()?;
                let comp = self.clone();
                let tail = self.clone();
                let owner = self.clone();
                let z = zeta.clone();
                let mix = scaled_mixture(
                    move |c| {
                        let i = c as u64;
                        let lam = comp.lambda_sq(i).ok()?;
                        let mu = comp.child_measure(i).ok()?;
                        Some((lam, harmonic_push(mu)))
                    },
                    move |after, degree, _| tail.tail(after, degree, &z),
                )
                .with_label(format!("μ(x_{})", self.j))
                .with_length(None)
                .with_owner(move |t| Some(owner.owner(t).map(|i| i as usize)));
                Ok(mix.build())
            })
            .clone()
    }

    /// Degree-`n` moment from the closed form, used as an independent check.
    pub fn closed_form_top_moment(&self, terms: u64) -> MeasureResult<Interval<T>> {
        let zeta = self.zeta()?;
        let mut s = Interval::<T>::one();
        for k in 2..=terms.max(2) {
            s = &s + &Interval::from_rational(&q(1, (k * k) as i64));
        }
        let (lo, hi) = inverse_square_tail(terms.max(2));
        s = &s + &Interval::from_rationals(&lo, &hi);
        Ok(&s / &zeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;

    #[test]
    fn theta_sequence() {
        assert_eq!([theta(0), theta(1), theta(2)], [1, 4, 9]);
    }

    #[test]
    fn inverse_square_tail_brackets() {
        for k in [1u64, 2, 5, 30] {
            let (lo, hi) = inverse_square_tail(k);
            // compare with a long partial sum plus its own crude tail
            let long: BigRational = (k + 1..=k + 3000).map(|i| ratio(1, (i * i) as i64)).sum();
            let rest_hi = ratio(1, (k + 3000) as i64);
            assert!(long <= hi);
            assert!(&long + &rest_hi >= lo);
        }
    }

    #[test]
    fn power_tail_bounds() {
        let direct: BigRational = (11..=2000u64).map(|i| qpow(&ratio(i as i64, 1), 4).recip()).sum();
        assert!(direct <= power_tail(10, 4));
    }
}
