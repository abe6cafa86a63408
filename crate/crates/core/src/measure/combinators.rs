//! Point masses, rescaling, power tilts and lazy mixtures.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use num_rational::BigRational;
use num_traits::{One, Signed};
use rayon::prelude::*;

use super::{
    Atom, Budget, DiscreteMeasure, DivergenceCertificate, MeasureError, MeasureResult, MeasureSource, MomentValue,
    OriginKey, TailBound,
};
use crate::interval::Interval;
use crate::scalar::{format_rational, Scalar};

fn rational_power(base: &BigRational, exp: i32) -> BigRational {
    let mut out = BigRational::one();
    for _ in 0..exp.unsigned_abs() {
        out *= base;
    }
    if exp < 0 {
        out.recip()
    } else {
        out
    }
}

/// Positive lower endpoint of a coefficient, for scaling certificates.
fn positive_lo<T: Scalar>(iv: &Interval<T>, what: &str) -> MeasureResult<BigRational> {
    let lo = iv.lo().to_rational();
    if lo.is_positive() {
        Ok(lo)
    } else {
        Err(MeasureError::Unresolved(format!("{what}: coefficient lower bound is not positive")))
    }
}

struct PointMass<T> {
    support: BigRational,
    mass: Interval<T>,
}

/// Single atom at `support >= 1`.
pub fn point_mass<T: Scalar>(support: BigRational, mass: Interval<T>) -> DiscreteMeasure<T> {
    assert!(support >= BigRational::one(), "supports live in [1, ∞)");
    DiscreteMeasure::from_source(PointMass { support, mass })
}

impl<T: Scalar> MeasureSource<T> for PointMass<T> {
    fn support_floor(&self) -> BigRational {
        self.support.clone()
    }

    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>> {
        Ok((index == 0).then(|| Atom {
            support: self.support.clone(),
            mass: self.mass.clone(),
            origin: OriginKey { key: format!("point:{}", format_rational(&self.support)), index: 1 },
        }))
    }

    fn moment(&self, degree: i32, _budget: &Budget) -> MeasureResult<MomentValue<T>> {
        let power = Interval::from_rational(&rational_power(&self.support, degree));
        Ok(MomentValue::Finite(&self.mass * &power))
    }

    fn tail_bound(&self, _degree: i32, n: usize) -> Option<TailBound<T>> {
        (n >= 1).then(|| TailBound::Bounded(Interval::zero()))
    }

    fn mass_by_allocation(&self, support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        Some(Ok(if *support == self.support { self.mass.clone() } else { Interval::zero() }))
    }

    fn describe(&self) -> String {
        format!("δ({})", format_rational(&self.support))
    }
}

struct Scaled<T: Scalar> {
    inner: DiscreteMeasure<T>,
    factor: Interval<T>,
}

/// Every mass multiplied by `factor` (nonnegative).
pub fn scaled<T: Scalar>(inner: DiscreteMeasure<T>, factor: Interval<T>) -> DiscreteMeasure<T> {
    assert!(factor.is_nonnegative(), "scaling factor must be nonnegative");
    DiscreteMeasure::from_source(Scaled { inner, factor })
}

impl<T: Scalar> MeasureSource<T> for Scaled<T> {
    fn support_floor(&self) -> BigRational {
        self.inner.support_floor()
    }

    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>> {
        Ok(self.inner.source().atom(index)?.map(|a| Atom { mass: &a.mass * &self.factor, ..a }))
    }

    fn atoms(&self, count: usize) -> MeasureResult<Vec<Atom<T>>> {
        Ok(self.inner.source().atoms(count)?.into_iter().map(|a| Atom { mass: &a.mass * &self.factor, ..a }).collect())
    }

    fn moment(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        match self.inner.moment_raw(degree, budget)? {
            MomentValue::Finite(v) => Ok(MomentValue::Finite(&v * &self.factor)),
            MomentValue::Divergent(c) => {
                let lo = positive_lo(&self.factor, "scaled")?;
                Ok(MomentValue::Divergent(c.scaled(&lo, "scaled")))
            }
        }
    }

    fn tail_bound(&self, degree: i32, n: usize) -> Option<TailBound<T>> {
        Some(match self.inner.tail_bound(degree, n)? {
            TailBound::Bounded(t) => TailBound::Bounded(&t * &self.factor),
            TailBound::Infinite => TailBound::Infinite,
        })
    }

    fn mass_by_allocation(&self, support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        Some(self.inner.source().mass_by_allocation(support)?.map(|m| &m * &self.factor))
    }

    fn describe(&self) -> String {
        format!("{} · {}", self.factor, self.inner.describe())
    }
}

struct Tilt<T: Scalar> {
    inner: DiscreteMeasure<T>,
    power: i32,
}

/// `Δ ↦ ∫_Δ s^power dμ`.
pub fn tilt<T: Scalar>(inner: DiscreteMeasure<T>, power: i32) -> DiscreteMeasure<T> {
    DiscreteMeasure::from_source(Tilt { inner, power })
}

/// `Δ ↦ ∫_Δ (1/s) dμ`.
pub fn harmonic_push<T: Scalar>(inner: DiscreteMeasure<T>) -> DiscreteMeasure<T> {
    tilt(inner, -1)
}

impl<T: Scalar> Tilt<T> {
    fn weight(&self, a: Atom<T>) -> Atom<T> {
        let w = Interval::from_rational(&rational_power(&a.support, self.power));
        Atom { mass: &a.mass * &w, ..a }
    }
}

impl<T: Scalar> MeasureSource<T> for Tilt<T> {
    fn support_floor(&self) -> BigRational {
        self.inner.support_floor()
    }

    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>> {
        Ok(self.inner.source().atom(index)?.map(|a| self.weight(a)))
    }

    fn atoms(&self, count: usize) -> MeasureResult<Vec<Atom<T>>> {
        Ok(self.inner.source().atoms(count)?.into_iter().map(|a| self.weight(a)).collect())
    }

    fn moment(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        self.inner.moment_raw(degree + self.power, budget)
    }

    fn tail_bound(&self, degree: i32, n: usize) -> Option<TailBound<T>> {
        self.inner.tail_bound(degree + self.power, n)
    }

    fn mass_by_allocation(&self, support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        let w = Interval::from_rational(&rational_power(support, self.power));
        Some(self.inner.source().mass_by_allocation(support)?.map(|m| &m * &w))
    }

    fn describe(&self) -> String {
        format!("s^{} · {}", self.power, self.inner.describe())
    }
}

/// Divides all masses by the certified total mass.
pub fn normalize<T: Scalar>(mu: &DiscreteMeasure<T>, precision: &BigRational, horizon: usize) -> MeasureResult<DiscreteMeasure<T>> {
    let total = mu.total_mass(precision, horizon)?.expect_finite("normalize")?;
    if !total.is_positive() {
        return Err(MeasureError::Unresolved("normalize: total mass not certifiably positive".into()));
    }
    let inv = &Interval::one() / &total;
    Ok(scaled(mu.clone(), inv))
}

/// What a mixture tail oracle knows about `Σ_{c >= after} coeff_c · ∫ s^d dμ_c`.
#[derive(Debug, Clone)]
pub enum TailEstimate<T> {
    Bounded(Interval<T>),
    Divergent(DivergenceCertificate),
    Unknown,
}

pub type ComponentFn<T> = dyn Fn(usize) -> Option<(Interval<T>, DiscreteMeasure<T>)> + Send + Sync;
pub type MixtureTail<T> = dyn Fn(usize, i32, &Budget) -> TailEstimate<T> + Send + Sync;
pub type OwnerFn = dyn Fn(&BigRational) -> Option<Option<usize>> + Send + Sync;

type Component<T> = Option<(Interval<T>, DiscreteMeasure<T>)>;

pub struct Mixture<T: Scalar> {
    label: String,
    components: Arc<ComponentFn<T>>,
    tail: Arc<MixtureTail<T>>,
    owner: Option<Arc<OwnerFn>>,
    floor: BigRational,
    length: Option<Option<usize>>,
    cache: Mutex<HashMap<usize, Component<T>>>,
    moments: Mutex<HashMap<(usize, i32, usize, BigRational), MomentValue<T>>>,
}

/// Lazy mixture `Σ_c coeff_c · μ_c`; `components(c)` returns `None` past the last component.
pub fn scaled_mixture<T: Scalar>(
    components: impl Fn(usize) -> Option<(Interval<T>, DiscreteMeasure<T>)> + Send + Sync + 'static,
    tail: impl Fn(usize, i32, &Budget) -> TailEstimate<T> + Send + Sync + 'static,
) -> Mixture<T> {
    Mixture {
        label: "mixture".into(),
        components: Arc::new(components),
        tail: Arc::new(tail),
        owner: None,
        floor: BigRational::one(),
        length: None,
        cache: Mutex::new(HashMap::new()),
        moments: Mutex::new(HashMap::new()),
    }
}

/// Finite mixture with a zero coefficient tail.
pub fn finite_mixture<T: Scalar>(parts: Vec<(Interval<T>, DiscreteMeasure<T>)>) -> DiscreteMeasure<T> {
    let parts = Arc::new(parts);
    let floor = parts.iter().map(|(_, m)| m.support_floor()).min().unwrap_or_else(BigRational::one);
    let p = parts.clone();
    scaled_mixture(move |c| p.get(c).cloned(), |_, _, _| TailEstimate::Bounded(Interval::zero()))
        .with_floor(floor)
        .with_length(Some(parts.len()))
        .build()
}

impl<T: Scalar> Mixture<T> {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Allocation-based owner lookup: `Some(Some(c))` if component `c` owns
    /// the support, `Some(None)` if none does.
    pub fn with_owner(mut self, owner: impl Fn(&BigRational) -> Option<Option<usize>> + Send + Sync + 'static) -> Self {
        self.owner = Some(Arc::new(owner));
        self
    }

    pub fn with_floor(mut self, floor: BigRational) -> Self {
        self.floor = floor;
        self
    }

    /// Declares the number of components (`None` for infinitely many) so it is never probed.
    pub fn with_length(mut self, length: Option<usize>) -> Self {
        self.length = Some(length);
        self
    }

    pub fn build(self) -> DiscreteMeasure<T> {
        DiscreteMeasure::from_source(self)
    }

    fn component(&self, c: usize) -> Component<T> {
        if let Some(hit) = self.cache.lock().unwrap().get(&c) {
            return hit.clone();
        }
        let made = (self.components)(c);
        self.cache.lock().unwrap().insert(c, made.clone());
        made
    }

    /// Number of components if it is below `limit`.
    fn count_below(&self, limit: usize) -> Option<usize> {
        (0..limit).find(|&c| self.component(c).is_none())
    }

    fn component_moment(&self, c: usize, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        let key = (c, degree, budget.horizon, budget.tolerance.clone());
        if let Some(hit) = self.moments.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let (coeff, mu) = self.component(c).expect("component exists");
        let value = match mu.moment_raw(degree, budget)? {
            MomentValue::Finite(v) => MomentValue::Finite(&coeff * &v),
            MomentValue::Divergent(cert) => {
                let lo = positive_lo(&coeff, &self.label)?;
                MomentValue::Divergent(cert.scaled(&lo, &format!("{} component {c}", self.label)))
            }
        };
        self.moments.lock().unwrap().insert(key, value.clone());
        Ok(value)
    }
}

impl<T: Scalar> MeasureSource<T> for Mixture<T> {
    fn support_floor(&self) -> BigRational {
        self.floor.clone()
    }

    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>> {
        Ok(self.atoms(index + 1)?.into_iter().nth(index))
    }

    /// Diagonal interleaving: atom `i` of component `c` is emitted on diagonal `c + i`.
    fn atoms(&self, count: usize) -> MeasureResult<Vec<Atom<T>>> {
        let mut fetched: Vec<Vec<Atom<T>>> = Vec::new();
        let mut exhausted: Vec<bool> = Vec::new();
        let mut component_count: Option<usize> = None;
        let mut diagonals = 1usize;
        loop {
            // make sure every component touching the first `diagonals` diagonals is fetched deep enough
            for c in 0..diagonals {
                if component_count.is_some_and(|n| c >= n) {
                    break;
                }
                if c == fetched.len() {
                    if self.component(c).is_none() {
                        component_count = Some(c);
                        break;
                    }
                    fetched.push(Vec::new());
                    exhausted.push(false);
                }
                let need = diagonals - c;
                if !exhausted[c] && fetched[c].len() < need {
                    let (coeff, mu) = self.component(c).expect("component exists");
                    let got = mu.source().atoms(need)?;
                    exhausted[c] = got.len() < need;
                    fetched[c] = got.into_iter().map(|a| Atom { mass: &a.mass * &coeff, ..a }).collect();
                }
            }
            let mut out = Vec::with_capacity(count);
            let mut owners: BTreeMap<BigRational, usize> = BTreeMap::new();
            'diag: for s in 0..diagonals {
                for c in 0..=s.min(fetched.len().saturating_sub(1)) {
                    if c >= fetched.len() {
                        break;
                    }
                    if let Some(a) = fetched[c].get(s - c) {
                        if let Some(&prev) = owners.get(&a.support) {
                            if prev != c {
                                return Err(MeasureError::DisjointnessViolation {
                                    support: format_rational(&a.support),
                                    first: format!("component {prev}"),
                                    second: format!("component {c} ({})", a.origin),
                                });
                            }
                        }
                        owners.insert(a.support.clone(), c);
                        out.push(a.clone());
                        if out.len() == count {
                            break 'diag;
                        }
                    }
                }
            }
            let all_done = component_count.is_some() && exhausted.iter().all(|&e| e);
            if out.len() == count || all_done {
                return Ok(out);
            }
            diagonals *= 2;
        }
    }

    fn moment(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        let half = &budget.tolerance / BigRational::from_integer(2.into());
        let limit = budget.max_components.max(1);
        let count = match self.length {
            Some(known) => known,
            None => self.count_below(limit + 1),
        };
        // choose how many components to sum from the tail oracle alone
        let (k, tail) = match count {
            Some(n) => (n, Interval::zero()),
            None => {
                let mut k = 4.min(limit);
                loop {
                    match (self.tail)(k, degree, budget) {
                        TailEstimate::Divergent(cert) => return Ok(MomentValue::Divergent(cert)),
                        TailEstimate::Bounded(t) => {
                            if t.width().to_rational() <= half || k >= limit {
                                break (k, t);
                            }
                        }
                        TailEstimate::Unknown => {
                            // a divergent leading component settles it without a tail
                            for c in 0..k {
                                if let MomentValue::Divergent(cert) = self.component_moment(c, degree, budget)? {
                                    return Ok(MomentValue::Divergent(cert));
                                }
                            }
                            if k >= limit {
                                return Err(MeasureError::Unresolved(format!(
                                    "{}: no tail bound at degree {degree}",
                                    self.label
                                )));
                            }
                        }
                    }
                    k = (k * 2).min(limit);
                }
            }
        };
        let inner = budget.with_tolerance(&budget.tolerance / BigRational::from_integer(64.into()));
        let parts: Vec<MeasureResult<MomentValue<T>>> =
            (0..k).into_par_iter().map(|c| self.component_moment(c, degree, &inner)).collect();
        let mut sum = tail;
        for part in parts {
            match part? {
                MomentValue::Finite(v) => sum = &sum + &v,
                MomentValue::Divergent(cert) => return Ok(MomentValue::Divergent(cert)),
            }
        }
        Ok(MomentValue::Finite(sum))
    }

    fn mass_by_allocation(&self, support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        let owner = self.owner.as_ref()?;
        match owner(support)? {
            None => Some(Ok(Interval::zero())),
            Some(c) => {
                let (coeff, mu) = match self.component(c) {
                    Some(found) => found,
                    None => return Some(Ok(Interval::zero())),
                };
                Some(mu.source().mass_by_allocation(support)?.map(|m| &coeff * &m))
            }
        }
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::gap_measure;
    use crate::scalar::ratio;
    use num_traits::Zero;

    type Q = BigRational;

    fn delta(s: i64, m: BigRational) -> DiscreteMeasure<Q> {
        point_mass(ratio(s, 1), Interval::from_rational(&m))
    }

    #[test]
    fn point_mass_moments() {
        let d = delta(2, ratio(1, 1));
        let v = d.moment(3, &ratio(1, 10), 1).unwrap();
        assert_eq!(v.finite().unwrap(), &Interval::from_int(8));
        let half = delta(3, ratio(1, 2));
        assert_eq!(half.total_mass(&ratio(1, 10), 1).unwrap().finite().unwrap(), &Interval::from_rational(&ratio(1, 2)));
        let a = d.atoms(1).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].support, ratio(2, 1));
        assert!(d.atoms(0).is_err());
    }

    #[test]
    fn point_mass_lookup() {
        let d = delta(2, ratio(1, 1));
        assert_eq!(d.mass_at(&ratio(2, 1), 1).unwrap(), Interval::one());
        assert_eq!(d.mass_at(&ratio(3, 1), 1).unwrap(), Interval::zero());
    }

    #[test]
    fn harmonic_push_divides_by_support() {
        let p = harmonic_push(delta(2, ratio(1, 1)));
        assert_eq!(p.atoms(1).unwrap()[0].mass, Interval::from_rational(&ratio(1, 2)));
        let q = harmonic_push(delta(1, ratio(1, 3)));
        assert_eq!(q.atoms(1).unwrap()[0].mass, Interval::from_rational(&ratio(1, 3)));
        let g = gap_measure(1, 1, 0);
        let pushed = harmonic_push(DiscreteMeasure::<Q>::from_source(g.clone()));
        for (k, a) in pushed.atoms(5).unwrap().iter().enumerate() {
            let i = k as i64 + 1;
            // 1/(i(i+1) a_i^{m+1}) with a_i = i
            assert_eq!(a.mass, Interval::from_rational(&ratio(1, i * (i + 1) * i * i)));
            assert_eq!(&a.mass * &Interval::from_rational(&a.support), Interval::from_rational(&g.mass(i as u64)));
        }
    }

    #[test]
    fn normalization() {
        let d = delta(1, ratio(2, 1));
        let n = normalize(&d, &ratio(1, 100), 1).unwrap();
        assert_eq!(n.atoms(1).unwrap()[0].mass, Interval::one());
        let g = DiscreteMeasure::<Q>::from_source(gap_measure(1, 1, 0));
        assert!(normalize(&tilt(g, 3), &ratio(1, 100), 64).is_err());
    }

    #[test]
    fn singleton_and_pair_mixtures() {
        let one = finite_mixture(vec![(Interval::one(), delta(2, ratio(1, 1)))]);
        let a = one.atoms(3).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].mass, Interval::one());
        let h = Interval::from_rational(&ratio(1, 2));
        let two = finite_mixture(vec![(h.clone(), delta(2, ratio(1, 1))), (h.clone(), delta(3, ratio(1, 1)))]);
        let a = two.atoms(5).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|x| x.mass == h));
        let total = two.total_mass(&ratio(1, 100), 4).unwrap();
        assert!(total.finite().unwrap().contains(&ratio(1, 1)));
    }

    #[test]
    fn overlapping_supports_are_rejected() {
        let h = Interval::from_rational(&ratio(1, 2));
        let bad = finite_mixture(vec![(h.clone(), delta(2, ratio(1, 1))), (h, delta(2, ratio(1, 1)))]);
        assert!(matches!(bad.atoms(2), Err(MeasureError::DisjointnessViolation { .. })));
    }

    #[test]
    fn lazy_mixture_of_gaps_interleaves_fairly() {
        let mix = scaled_mixture(
            |c| {
                let g = gap_measure(1, 1, c as u128);
                Some((Interval::from_rational(&crate::scalar::dyadic(c as u64 + 1)), DiscreteMeasure::from_source(g)))
            },
            |after, degree, _| {
                if degree <= 1 {
                    TailEstimate::Bounded(Interval::from_rationals(&Q::zero(), &crate::scalar::dyadic(after as u64)))
                } else {
                    TailEstimate::Unknown
                }
            },
        )
        .build();
        let atoms = mix.atoms(10).unwrap();
        assert_eq!(atoms.len(), 10);
        let keys: std::collections::BTreeSet<_> = atoms.iter().map(|a| a.origin.key.clone()).collect();
        assert!(keys.len() >= 4);
        let m1 = mix.moment(1, &ratio(1, 1000), 4096).unwrap();
        assert!(m1.finite().unwrap().contains(&ratio(1, 1)));
        let m2 = mix.moment(2, &ratio(1, 1000), 64).unwrap();
        assert!(m2.is_divergent());
    }
}
