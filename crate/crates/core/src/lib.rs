//! Certified construction of weighted shifts on extremal directed trees whose
//! `n`-th power is densely defined while the `(n+1)`-th power has trivial
//! domain.
//!
//! Everything numeric is generic over [`Scalar`]; [`Rational`] gives exact
//! outward-rounded interval arithmetic and `f64` a fast approximate lane.

pub mod bridge;
pub mod construction;
pub mod interval;
pub mod measure;
pub mod scalar;
pub mod tree;
pub mod verification;

pub use interval::Interval;
pub use scalar::Scalar;

pub type Rational = num_rational::BigRational;
pub type RatInterval = Interval<Rational>;
pub type FloatInterval = Interval<f64>;

pub use construction::model::{assemble, ShiftModel};

pub type RationalModel = ShiftModel<Rational>;
pub type FloatModel = ShiftModel<f64>;
