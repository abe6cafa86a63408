//! Certified discrete measures on `[1, ∞)`.
//!
//! A [`DiscreteMeasure`] is a cheap handle to a lazily evaluated
//! [`MeasureSource`]. Atoms are enumerated in a fixed canonical order;
//! moments are evaluated from partial sums plus certified tails, and infinite
//! moments come with a [`DivergenceCertificate`] derived from how the measure
//! was built, never from numerical growth.

mod certificate;
mod combinators;
mod gap;
pub mod special;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::Signed;
use thiserror::Error;

pub use certificate::{exact_partial_sum, CertificateCheck, DivergenceCertificate, SummationMethod, DIRECT_LIMIT};
pub use combinators::{
    finite_mixture, harmonic_push, normalize, point_mass, scaled, scaled_mixture, tilt, ComponentFn, Mixture, MixtureTail,
    OwnerFn, TailEstimate,
};
pub use gap::{gap_measure, GapMeasure};

use crate::interval::Interval;
use crate::scalar::{format_rational, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precision unreachable at this horizon (best width {best_width:.3e})")]
    PrecisionUnreachable { best_width: f64 },
    #[error("two atoms share support {support} ({first} vs {second})")]
    DisjointnessViolation { support: String, first: String, second: String },
    #[error("unresolved: {0}")]
    Unresolved(String),
    #[error("moment diverges: {0}")]
    Divergent(String),
}

pub type MeasureResult<T> = Result<T, MeasureError>;

/// Where an atom came from: the allocation key of its generating measure and
/// the atom's index inside it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OriginKey {
    pub key: String,
    pub index: u64,
}

impl fmt::Display for OriginKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.key, self.index)
    }
}

#[derive(Debug, Clone)]
pub struct Atom<T> {
    pub support: BigRational,
    pub mass: Interval<T>,
    pub origin: OriginKey,
}

impl<T: Scalar> Atom<T> {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "support": format_rational(&self.support),
            "mass": self.mass.to_json(),
            "origin": self.origin.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum MomentValue<T> {
    Finite(Interval<T>),
    Divergent(DivergenceCertificate),
}

impl<T: Scalar> MomentValue<T> {
    pub fn is_finite(&self) -> bool {
        matches!(self, MomentValue::Finite(_))
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, MomentValue::Divergent(_))
    }

    pub fn finite(&self) -> Option<&Interval<T>> {
        match self {
            MomentValue::Finite(i) => Some(i),
            MomentValue::Divergent(_) => None,
        }
    }

    pub fn certificate(&self) -> Option<&DivergenceCertificate> {
        match self {
            MomentValue::Divergent(c) => Some(c),
            MomentValue::Finite(_) => None,
        }
    }

    /// Finite value or an error naming the divergence.
    pub fn expect_finite(self, what: &str) -> MeasureResult<Interval<T>> {
        match self {
            MomentValue::Finite(i) => Ok(i),
            MomentValue::Divergent(c) => Err(MeasureError::Divergent(format!("{what}: {}", c.description()))),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            MomentValue::Finite(i) => serde_json::json!({ "finite": i.to_json() }),
            MomentValue::Divergent(c) => serde_json::json!({ "divergent": c.to_json() }),
        }
    }
}

/// Evaluation effort: atoms per leaf series, target absolute width, and how
/// many mixture components may be expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub horizon: usize,
    pub tolerance: BigRational,
    pub max_components: usize,
}

impl Budget {
    pub fn new(horizon: usize, tolerance: BigRational) -> Self {
        Self { horizon, tolerance, max_components: 4096 }
    }

    pub fn with_tolerance(&self, tolerance: BigRational) -> Self {
        Self { tolerance, ..self.clone() }
    }
}

/// Tail of a leaf series after its first `n` atoms at one degree.
#[derive(Debug, Clone)]
pub enum TailBound<T> {
    /// Lower and upper bound of the remaining sum.
    Bounded(Interval<T>),
    Infinite,
}

pub trait MeasureSource<T: Scalar>: Send + Sync {
    /// Every atom lies in `[support_floor, ∞)`.
    fn support_floor(&self) -> BigRational;

    /// Atom number `index` (0-based) in canonical order, `None` past the end.
    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>>;

    /// First `count` atoms. Sources with expensive random access override this.
    fn atoms(&self, count: usize) -> MeasureResult<Vec<Atom<T>>> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            match self.atom(i)? {
                Some(a) => out.push(a),
                None => break,
            }
        }
        Ok(out)
    }

    /// Certified `∫ s^degree dμ`. Any integer degree is accepted here.
    fn moment(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>>;

    /// Remaining sum after the first `n` atoms, when the source has a closed-form oracle.
    fn tail_bound(&self, _degree: i32, _n: usize) -> Option<TailBound<T>> {
        None
    }

    /// `Some(mass)` (possibly exact zero) when the source can decide the mass
    /// at `support` without enumeration.
    fn mass_by_allocation(&self, _support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        None
    }

    fn describe(&self) -> String;
}

#[derive(Clone)]
pub struct DiscreteMeasure<T: Scalar> {
    source: Arc<dyn MeasureSource<T>>,
}

impl<T: Scalar> fmt::Debug for DiscreteMeasure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiscreteMeasure({})", self.source.describe())
    }
}

impl<T: Scalar> DiscreteMeasure<T> {
    pub fn from_source(source: impl MeasureSource<T> + 'static) -> Self {
        Self { source: Arc::new(source) }
    }

    pub fn from_arc(source: Arc<dyn MeasureSource<T>>) -> Self {
        Self { source }
    }

    pub fn source(&self) -> &Arc<dyn MeasureSource<T>> {
        &self.source
    }

    pub fn describe(&self) -> String {
        self.source.describe()
    }

    pub fn support_floor(&self) -> BigRational {
        self.source.support_floor()
    }

    /// First `n >= 1` atoms in canonical order.
    pub fn atoms(&self, n: usize) -> MeasureResult<Vec<Atom<T>>> {
        if n == 0 {
            return Err(MeasureError::InvalidArgument("atoms: n must be positive".into()));
        }
        self.source.atoms(n)
    }

    /// Certified moment of degree `>= -1` with width at most `precision`.
    pub fn moment(&self, degree: i32, precision: &BigRational, horizon: usize) -> MeasureResult<MomentValue<T>> {
        if degree < -1 {
            return Err(MeasureError::InvalidArgument(format!("degree {degree} < -1")));
        }
        if horizon == 0 {
            return Err(MeasureError::InvalidArgument("horizon must be positive".into()));
        }
        if !precision.is_positive() {
            return Err(MeasureError::InvalidArgument("precision must be positive".into()));
        }
        let budget = Budget::new(horizon, precision.clone());
        self.moment_with(degree, &budget)
    }

    /// Moment under an explicit budget; fails if the width exceeds `budget.tolerance`.
    pub fn moment_with(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        let value = self.source.moment(degree, budget)?;
        if let MomentValue::Finite(iv) = &value {
            let width = iv.width().to_rational();
            if width > budget.tolerance {
                return Err(MeasureError::PrecisionUnreachable {
                    best_width: num_traits::ToPrimitive::to_f64(&width).unwrap_or(f64::INFINITY),
                });
            }
        }
        Ok(value)
    }

    /// Moment without the width check (for intermediate quantities).
    pub fn moment_raw(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        self.source.moment(degree, budget)
    }

    pub fn total_mass(&self, precision: &BigRational, horizon: usize) -> MeasureResult<MomentValue<T>> {
        self.moment(0, precision, horizon)
    }

    pub fn tail_bound(&self, degree: i32, n: usize) -> Option<TailBound<T>> {
        self.source.tail_bound(degree, n)
    }

    /// Mass at `support`: exact zero when the allocator proves absence,
    /// otherwise the matching atom among the first `horizon` ones.
    pub fn mass_at(&self, support: &BigRational, horizon: usize) -> MeasureResult<Interval<T>> {
        if horizon == 0 {
            return Err(MeasureError::InvalidArgument("horizon must be positive".into()));
        }
        if let Some(found) = self.source.mass_by_allocation(support) {
            return found;
        }
        for atom in self.source.atoms(horizon)? {
            if atom.support == *support {
                return Ok(atom.mass);
            }
        }
        if self.source.atom(horizon)?.is_none() {
            // finitely many atoms, all inspected
            return Ok(Interval::zero());
        }
        Err(MeasureError::Unresolved(format!(
            "support {} not among the first {horizon} atoms of {}",
            format_rational(support),
            self.describe()
        )))
    }
}

/// Checks pairwise distinct supports among `atoms`.
pub fn check_disjoint<T: Scalar>(atoms: &[Atom<T>]) -> MeasureResult<()> {
    let mut seen: BTreeMap<&BigRational, &OriginKey> = BTreeMap::new();
    for a in atoms {
        if let Some(prev) = seen.insert(&a.support, &a.origin) {
            if prev.key != a.origin.key {
                return Err(MeasureError::DisjointnessViolation {
                    support: format_rational(&a.support),
                    first: prev.to_string(),
                    second: a.origin.to_string(),
                });
            }
        }
    }
    Ok(())
}
