//! Harmonic-comparison divergence certificates.
//!
//! A certificate claims that the `i`-th term of some nonnegative series is at
//! least `c / (i + i0)` for every `i >= 1`. The witness closure returns a
//! certified lower bound of each actual term, so partial sums can be checked
//! by plain summation. Beyond [`DIRECT_LIMIT`] terms the check switches to
//! dyadic blocks of the minorant, each of which contributes at least `c / 2`.

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::scalar::format_rational;

/// Terms summed one by one before block summation takes over.
pub const DIRECT_LIMIT: u64 = 1 << 16;

/// Fixed-point bits used by the lower-bound accumulator.
const ACC_BITS: u64 = 128;

type TermFn = dyn Fn(u64) -> BigRational + Send + Sync;

#[derive(Clone)]
pub struct DivergenceCertificate {
    coefficient: BigRational,
    offset: u64,
    witness: Arc<TermFn>,
    description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummationMethod {
    /// Every witness term was summed.
    Direct,
    /// Direct summation up to [`DIRECT_LIMIT`], dyadic minorant blocks after.
    Blocked { blocks: u64 },
}

#[derive(Debug, Clone)]
pub struct CertificateCheck {
    pub bound: BigRational,
    pub index: BigUint,
    /// Certified lower bound of the partial sum up to `index`.
    pub partial_sum_lower: BigRational,
    pub method: SummationMethod,
    /// Whether every inspected witness term dominated the minorant.
    pub minorant_respected: bool,
    pub passed: bool,
}

impl DivergenceCertificate {
    /// `coefficient` must be positive, `offset >= 1`.
    pub fn new(
        coefficient: BigRational,
        offset: u64,
        description: impl Into<String>,
        witness: impl Fn(u64) -> BigRational + Send + Sync + 'static,
    ) -> Self {
        assert!(coefficient.is_positive(), "certificate coefficient must be positive");
        assert!(offset >= 1, "certificate offset must be positive");
        Self { coefficient, offset, witness: Arc::new(witness), description: description.into() }
    }

    pub fn coefficient(&self) -> &BigRational {
        &self.coefficient
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Certified lower bound of the `i`-th term (1-based).
    pub fn term_lower(&self, i: u64) -> BigRational {
        (self.witness)(i)
    }

    /// The same series with every term multiplied by `factor > 0`.
    pub fn scaled(&self, factor: &BigRational, note: &str) -> Self {
        assert!(factor.is_positive());
        let inner = self.witness.clone();
        let f = factor.clone();
        Self {
            coefficient: &self.coefficient * factor,
            offset: self.offset,
            witness: Arc::new(move |i| inner(i) * &f),
            description: format!("{} · {}", note, self.description),
        }
    }

    fn minorant(&self, i: u64) -> BigRational {
        &self.coefficient / BigRational::from_integer(BigInt::from(i + self.offset))
    }

    /// An index `N` such that the minorant partial sum up to `N` exceeds `bound`.
    pub fn index_for_bound(&self, bound: &BigRational) -> BigUint {
        self.plan(bound).0
    }

    /// Returns `(N, direct terms, blocks)`.
    fn plan(&self, bound: &BigRational) -> (BigUint, u64, u64) {
        let mut acc = Accumulator::default();
        let threshold = Accumulator::threshold(bound);
        let scaled_c = self.coefficient.numer() << ACC_BITS;
        for i in 1..=DIRECT_LIMIT {
            // floor of c / (i + i0) on the grid, without building a rational
            acc.units += scaled_c.div_floor(&(self.coefficient.denom() * BigInt::from(i + self.offset)));
            if acc.units > threshold {
                return (BigUint::from(i), i, 0);
            }
        }
        // shifted index j = i + i0 runs over [L, 2L - 1] per block; each term
        // there is at least c / (2L), so a block adds at least c / 2
        let half = &self.coefficient / BigRational::from_integer(BigInt::from(2));
        let remaining = bound - acc.value();
        let blocks = (&remaining / &half).floor().to_integer().to_u64().expect("block count") + 1;
        let start = BigUint::from(DIRECT_LIMIT + self.offset + 1);
        let end_j = (start << blocks as usize) - BigUint::one();
        let n = end_j - BigUint::from(self.offset);
        (n, DIRECT_LIMIT, blocks)
    }

    /// Sums witness terms up to `index_for_bound(bound)` and checks the total exceeds `bound`.
    pub fn verify(&self, bound: &BigRational) -> CertificateCheck {
        let (index, direct, blocks) = self.plan(bound);
        let mut acc = Accumulator::default();
        let mut minorant_respected = true;
        for i in 1..=direct {
            let term = self.term_lower(i);
            if i.is_power_of_two() || i == direct {
                minorant_respected &= term >= self.minorant(i);
            }
            acc.add(&term);
        }
        let mut total = acc.value();
        let method = if blocks == 0 {
            SummationMethod::Direct
        } else {
            // one block lower bound, exactly: L terms each >= c / (2L - 1)
            let mut l = BigInt::from(DIRECT_LIMIT + self.offset + 1);
            for _ in 0..blocks.min(64) {
                let block = &self.coefficient * BigRational::new(l.clone(), &l * 2 - 1);
                total += block;
                l <<= 1;
            }
            if blocks > 64 {
                total += &self.coefficient * BigRational::new(BigInt::from(blocks - 64), BigInt::from(2));
            }
            SummationMethod::Blocked { blocks }
        };
        let passed = total > *bound && minorant_respected;
        CertificateCheck { bound: bound.clone(), index, partial_sum_lower: total, method, minorant_respected, passed }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "c": format_rational(&self.coefficient), "i0": self.offset })
    }
}

impl fmt::Debug for DivergenceCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DivergenceCertificate")
            .field("c", &format_rational(&self.coefficient))
            .field("i0", &self.offset)
            .field("witness", &self.description)
            .finish()
    }
}

/// Lower-bound accumulator on the grid `2^-ACC_BITS`.
#[derive(Default)]
struct Accumulator {
    units: BigInt,
}

impl Accumulator {
    fn add(&mut self, term: &BigRational) {
        let scaled = term.numer() << ACC_BITS;
        self.units += scaled.div_floor(term.denom());
    }

    /// `units > threshold(b)` exactly when `value() > b`.
    fn threshold(bound: &BigRational) -> BigInt {
        (bound.numer() << ACC_BITS).div_floor(bound.denom())
    }

    fn value(&self) -> BigRational {
        BigRational::new(self.units.clone(), BigInt::one() << ACC_BITS)
    }
}

/// Exact partial sum of `terms(1..=n)`; test and report helper.
pub fn exact_partial_sum(n: u64, terms: impl Fn(u64) -> BigRational) -> BigRational {
    (1..=n).fold(BigRational::zero(), |acc, i| acc + terms(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;

    fn harmonic() -> DivergenceCertificate {
        DivergenceCertificate::new(ratio(1, 1), 1, "1/(i+1)", |i| ratio(1, i as i64 + 1))
    }

    #[test]
    fn small_bounds_sum_directly() {
        let cert = harmonic();
        for b in [1, 3, 5] {
            let check = cert.verify(&ratio(b, 1));
            assert!(check.passed, "B = {b}");
            assert_eq!(check.method, SummationMethod::Direct);
            // index is minimal for the minorant itself
            let n = check.index.to_u64().unwrap();
            let before = exact_partial_sum(n - 1, |i| ratio(1, i as i64 + 1));
            assert!(before <= ratio(b, 1));
        }
    }

    #[test]
    fn large_bound_switches_to_blocks() {
        let check = harmonic().verify(&ratio(100, 1));
        assert!(check.passed);
        assert!(matches!(check.method, SummationMethod::Blocked { .. }));
        assert!(check.index > BigUint::from(DIRECT_LIMIT));
    }

    #[test]
    fn scaling_scales_coefficient() {
        let c = harmonic().scaled(&ratio(1, 4), "quarter");
        assert_eq!(c.coefficient(), &ratio(1, 4));
        assert_eq!(c.term_lower(3), ratio(1, 16));
        assert!(c.verify(&ratio(2, 1)).passed);
    }

    #[test]
    fn lying_witness_is_caught() {
        let liar = DivergenceCertificate::new(ratio(1, 1), 1, "liar", |_| ratio(1, 1_000_000));
        assert!(!liar.verify(&ratio(1, 1)).passed);
    }
}
