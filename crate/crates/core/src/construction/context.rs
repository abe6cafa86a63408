//! One rooted construction: the family `ν_x`, the partition `Ω_x` and the
//! measures `μ_x` on the descendants of a subtree root.
//!
//! Words `x ∈ X` are paths below the subtree root. `ν_x` is a scaled gap
//! measure of degree `|x| + n` drawing atoms from the allocation key
//! `(subtree, x)`. The `t`-selection is routed through atom indices: atom `i`
//! of `Δ_y` is `t_{y·(i+1)}` (or `t_{(i)}` when `y` is empty), and continues
//! as `t_{y·(i+1)·1·1…}`, so `Ω_x` holds an atom exactly when `x` is a prefix
//! of its route.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::allocator::{self, cantor_unpair, checked_cantor_pair, level_index, AllocationKey, SubtreeId};
use crate::interval::Interval;
use crate::measure::{
    Atom, Budget, DiscreteMeasure, DivergenceCertificate, GapMeasure, MeasureError, MeasureResult, MeasureSource,
    MomentValue, OriginKey,
};
use crate::scalar::{dyadic, round_rational, Scalar};

/// Finest exponent used for children tails outside the integral recursion.
const TAIL_CAP: u64 = 4096;

/// Accuracy of an integral evaluation: atoms per gap series and `2^-bits` relative width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Effort {
    pub horizon: u64,
    pub bits: u32,
}

impl Effort {
    pub const DEFAULT: Effort = Effort { horizon: 256, bits: 24 };

    /// Effort matching an absolute target width.
    pub fn for_budget(budget: &Budget) -> Self {
        let tol = &budget.tolerance;
        let bits = if tol.is_positive() {
            let approx = tol.denom().bits() as i64 - tol.numer().bits() as i64;
            (approx + 8).clamp(24, 96) as u32
        } else {
            24
        };
        Effort { horizon: budget.horizon.max(1) as u64, bits }
    }
}

type IntegralKey = (Vec<u64>, i32, Effort);

pub struct SubtreeContext<T: Scalar> {
    subtree: SubtreeId,
    theta: u64,
    n: u32,
    atom_effort: Effort,
    gaps: Mutex<HashMap<(Vec<u64>, i32, u64, u64), Interval<T>>>,
    integrals: Mutex<HashMap<IntegralKey, Interval<T>>>,
}

impl<T: Scalar> std::fmt::Debug for SubtreeContext<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SubtreeContext({}, θ={}, n={})", self.subtree, self.theta, self.n)
    }
}

impl<T: Scalar> SubtreeContext<T> {
    pub fn new(subtree: SubtreeId, n: u32, atom_effort: Effort) -> Arc<Self> {
        assert!(n >= 1, "order n must be positive");
        Arc::new(Self {
            subtree,
            theta: subtree.theta(),
            n,
            atom_effort,
            gaps: Mutex::new(HashMap::new()),
            integrals: Mutex::new(HashMap::new()),
        })
    }

    pub fn subtree(&self) -> SubtreeId {
        self.subtree
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }

    pub fn order(&self) -> u32 {
        self.n
    }

    pub fn key(&self, x: &[u64]) -> AllocationKey {
        AllocationKey::new(self.subtree, x.to_vec())
    }

    /// `c_x`: `1/2` at the root, `2^-k · 2^-(ξ_k(x) + 1)` on level `k`.
    pub fn scale(&self, x: &[u64]) -> BigRational {
        if x.is_empty() {
            return dyadic(1);
        }
        let xi = level_index(x).to_u64().expect("level index fits in u64");
        dyadic(x.len() as u64 + xi + 1)
    }

    /// `ν_x = c_x · gap(|x| + n, θ, key(x))`.
    pub fn nu_component(&self, x: &[u64]) -> GapMeasure {
        let key = self.key(x);
        GapMeasure::new(x.len() as u32 + self.n, self.theta, key.index(), self.scale(x), key.to_string())
    }

    /// `(owner word y, atom index i)` of `t_x`; `None` for the root.
    pub fn t_point(&self, x: &[u64]) -> Option<(Vec<u64>, u64)> {
        if x.is_empty() {
            return None;
        }
        let mut x = x.to_vec();
        while x.len() > 1 && *x.last().unwrap() == 1 {
            x.pop();
        }
        let j = x.pop().unwrap();
        if x.is_empty() {
            Some((x, j))
        } else {
            Some((x, j - 1))
        }
    }

    /// Whether atom `i` of `Δ_y` lies in `Ω_x`.
    pub fn omega_contains(&self, y: &[u64], i: u64, x: &[u64]) -> bool {
        x.iter().enumerate().all(|(p, &xp)| route_entry(y, i, p) == xp)
    }

    /// The child of `x` whose `Ω` holds atom `i` of `Δ_y` (which must lie in `Ω_x`).
    pub fn owning_child(&self, y: &[u64], i: u64, x: &[u64]) -> Vec<u64> {
        let mut v = x.to_vec();
        v.push(route_entry(y, i, x.len()));
        v
    }

    /// `(y, i)` if `support` is an atom of this context's `ν`.
    pub fn owner_of(&self, support: &BigRational) -> Option<(Vec<u64>, u64)> {
        let (xi, floor) = allocator::decode_fraction(support)?;
        let key = AllocationKey::from_index(xi);
        if key.subtree != self.subtree || floor < self.theta {
            return None;
        }
        Some((key.word, floor - self.theta + 1))
    }

    fn gap_moment(&self, y: &[u64], d: i32, target_exp: u64, effort: Effort) -> Interval<T> {
        let k = (y.to_vec(), d, target_exp, effort.horizon);
        if let Some(hit) = self.gaps.lock().unwrap().get(&k) {
            return hit.clone();
        }
        let target = dyadic(target_exp);
        let gap = GapMeasure::new(y.len() as u32 + self.n, self.theta, self.key(y).index(), BigRational::one(), String::new());
        let (iv, _) = gap.adaptive_enclosure::<T>(d, &target, effort.horizon).expect("degree within the finite range");
        let scaled = iv.scale_rational(&self.scale(y));
        self.gaps.lock().unwrap().insert(k, scaled.clone());
        scaled
    }

    /// `m - d` for the gap at `y`.
    fn excess(&self, y: &[u64], d: i32) -> u64 {
        (y.len() as i64 + self.n as i64 - d as i64).max(0) as u64
    }

    /// `floor(log2 θ)`.
    fn theta_bits(&self) -> u64 {
        64 - self.theta.leading_zeros() as u64 - 1
    }

    /// Upper bound of `Σ_{b' >= b} Σ_{z ⊒ y·(b'+1)} c_z`, never finer than `2^-cap`.
    fn children_tail(y: &[u64], b: u64, cap: u64) -> BigRational {
        if y.is_empty() {
            dyadic(b + 1) * BigRational::from_integer(BigInt::from(3))
        } else {
            let exp = checked_cantor_pair(level_index(y), b as u128).map_or(cap, |e| e.min(cap as u128) as u64);
            dyadic(y.len() as u64 + exp)
        }
    }

    /// Adds the gap moments below `y` to `acc`. Every gap strictly below `y`
    /// has unscaled moment at most `θ^-(m_y - d + 1)`, which weights the subtree tails.
    fn descend(&self, y: &mut Vec<u64>, d: i32, target_exp: u64, effort: Effort, prune: &BigRational, acc: &mut Interval<T>) {
        *acc = &*acc + &self.gap_moment(y, d, target_exp, effort);
        let damp = dyadic((self.excess(y, d) + 1) * self.theta_bits());
        // a cap below the threshold keeps the sibling loop finite however small `prune` is
        let cap = prune.denom().bits() + 1;
        let mut b = 0u64;
        loop {
            let tail = Self::children_tail(y, b, cap) * &damp;
            if tail <= *prune {
                *acc = &*acc + &Interval::from_rationals(&BigRational::zero(), &tail);
                return;
            }
            y.push(b + 1);
            self.descend(y, d, target_exp, effort, prune, acc);
            y.pop();
            b += 1;
        }
    }

    /// `∫_{Ω_x} s^d dν` for `d <= |x| + n`.
    pub fn integral(&self, x: &[u64], d: i32, effort: Effort) -> MeasureResult<Interval<T>> {
        if d > x.len() as i32 + self.n as i32 {
            return Err(MeasureError::InvalidArgument(format!("integral over Ω_x of degree {d} is infinite")));
        }
        let key = (x.to_vec(), d, effort);
        if let Some(hit) = self.integrals.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let mut acc = Interval::<T>::zero();
        if let Some((y, i)) = self.t_point(x) {
            acc = Interval::from_rational(&self.nu_component(&y).term(d, i));
        }
        // the gap at x alone gives I >= c_x / (2 (θ+1)^e); both the pruning
        // threshold and the per-gap targets are relative to that
        let lg = 64 - (self.theta + 1).leading_zeros() as u64;
        let floor_exp = 1 + self.excess(x, d) * lg;
        let prune = self.scale(x) * dyadic(effort.bits as u64 + 10 + floor_exp);
        let target_exp = effort.bits as u64 + 3 + floor_exp;
        let mut word = x.to_vec();
        self.descend(&mut word, d, target_exp, effort, &prune, &mut acc);
        self.integrals.lock().unwrap().insert(key, acc.clone());
        Ok(acc)
    }

    /// Upper bound of `μ_x` mass carried by the children `x·j` with `j > after`
    /// (`after >= 1`): `t` atoms past that index plus the descendant budget.
    pub fn children_mass_tail(&self, x: &[u64], after: u64, effort: Effort) -> MeasureResult<BigRational> {
        assert!(after >= 1);
        let k = x.len() as i32;
        let (_, t_tail) = self.nu_component(x).tail_bounds(k, after - 1).expect("degree below the gap order");
        let norm = self.integral(x, k, effort)?;
        let lo = norm.lo().to_rational();
        if !lo.is_positive() {
            return Err(MeasureError::Unresolved(format!("normalizer of {} not certified positive", self.key(x))));
        }
        Ok(round_rational((t_tail + Self::children_tail(x, after, TAIL_CAP)) / lo, true))
    }

    /// Squared weight of a non-root word: `∫_{Ω_x} s^k dν / ∫_{Ω_{pa x}} s^{k-1} dν`.
    pub fn lambda_sq(&self, x: &[u64], effort: Effort) -> MeasureResult<Interval<T>> {
        assert!(!x.is_empty(), "the subtree root has no weight inside its context");
        let k = x.len() as i32;
        let num = self.integral(x, k, effort)?;
        let den = self.integral(&x[..x.len() - 1], k - 1, effort)?;
        Ok(&num / &den)
    }

    /// Certified lower bound on `∫_{Ω_x} s^{|x|+d} dν` terms for `d > n`, as a
    /// sub-series of `ν_x`, divided by `norm_hi`.
    fn certificate(&self, x: &[u64], d: i32, norm_hi: BigRational) -> DivergenceCertificate {
        let gap = self.nu_component(x);
        let k = x.len() as i32;
        let coefficient = self.scale(x) / &norm_hi;
        DivergenceCertificate::new(
            coefficient,
            1,
            format!("Δ of {} at degree {}", self.key(x), d),
            move |i| gap.term(k + d, i) / &norm_hi,
        )
    }

    /// `μ_x`: `ν` restricted to `Ω_x`, tilted by `s^|x|` and normalized.
    pub fn mu(self: &Arc<Self>, x: &[u64]) -> DiscreteMeasure<T> {
        DiscreteMeasure::from_source(OmegaMeasure { ctx: self.clone(), x: x.to_vec(), normalized: true })
    }

    /// The unnormalized `ν` of the whole subtree.
    pub fn nu(self: &Arc<Self>) -> DiscreteMeasure<T> {
        DiscreteMeasure::from_source(OmegaMeasure { ctx: self.clone(), x: Vec::new(), normalized: false })
    }
}

/// Entry `p` of the route of atom `i` of `Δ_y`.
fn route_entry(y: &[u64], i: u64, p: usize) -> u64 {
    if y.is_empty() {
        if p == 0 {
            i
        } else {
            1
        }
    } else if p < y.len() {
        y[p]
    } else if p == y.len() {
        i + 1
    } else {
        1
    }
}

struct OmegaMeasure<T: Scalar> {
    ctx: Arc<SubtreeContext<T>>,
    x: Vec<u64>,
    normalized: bool,
}

impl<T: Scalar> OmegaMeasure<T> {
    fn tilt(&self) -> i32 {
        if self.normalized {
            self.x.len() as i32
        } else {
            0
        }
    }

    fn norm(&self, effort: Effort) -> MeasureResult<Interval<T>> {
        if self.normalized {
            self.ctx.integral(&self.x, self.tilt(), effort)
        } else {
            Ok(Interval::one())
        }
    }

    fn atom_of(&self, y: &[u64], i: u64, norm: &Interval<T>) -> Atom<T> {
        let gap = self.ctx.nu_component(y);
        let weighted = Interval::from_rational(&gap.term(self.tilt(), i));
        Atom {
            support: gap.support(i),
            mass: &weighted / norm,
            origin: OriginKey { key: self.ctx.key(y).to_string(), index: i },
        }
    }

    /// Positions `0..count` of the enumeration: `t_x` first, then `Δ_y`
    /// atoms for `y ⊒ x` along Cantor diagonals of (rank of `y`, atom index).
    /// Words are ranked by their scale exponent, so heavy words come first.
    fn locate_all(&self, count: usize) -> Vec<(Vec<u64>, u64)> {
        let skip = usize::from(!self.x.is_empty());
        let pairs: Vec<(u128, u128)> = (skip..count).map(|z| cantor_unpair((z - skip) as u128)).collect();
        let ranks = pairs.iter().map(|&(r, _)| r as usize + 1).max().unwrap_or(0);
        let words = words_by_weight(&self.x, ranks);
        let mut out = Vec::with_capacity(count);
        if skip == 1 && count > 0 {
            out.push(self.ctx.t_point(&self.x).expect("non-root word"));
        }
        out.extend(pairs.into_iter().map(|(r, i)| (words[r as usize].clone(), i as u64 + 1)));
        out
    }
}

/// Weight `|y| + ξ(y)` of a word, the exponent of its scale up to a constant.
fn weight(len: usize, xi: u128) -> u128 {
    len as u128 + xi
}

/// The first `count` words `y ⊒ x` ordered by `(weight, length, ξ)`.
fn words_by_weight(x: &[u64], count: usize) -> Vec<Vec<u64>> {
    if count == 0 {
        return Vec::new();
    }
    let root_xi = level_index(x);
    let mut limit = weight(x.len(), root_xi);
    loop {
        let mut found: Vec<(u128, usize, u128, Vec<u64>)> = Vec::new();
        let mut word = x.to_vec();
        collect_words(&mut word, root_xi, limit, &mut found);
        if found.len() >= count {
            found.sort();
            return found.into_iter().take(count).map(|(_, _, _, w)| w).collect();
        }
        limit += 1;
    }
}

fn collect_words(word: &mut Vec<u64>, xi: u128, limit: u128, out: &mut Vec<(u128, usize, u128, Vec<u64>)>) {
    out.push((weight(word.len(), xi), word.len(), xi, word.clone()));
    // ξ and therefore the weight increase with the appended letter
    for j in 1u64.. {
        let child = if word.is_empty() {
            Some((j - 1) as u128)
        } else {
            xi.checked_add(j as u128 - 1).and_then(|s| s.checked_mul(s + 1)).map(|t| t / 2 + (j as u128 - 1))
        };
        match child {
            Some(c) if weight(word.len() + 1, c) <= limit => {
                word.push(j);
                collect_words(word, c, limit, out);
                word.pop();
            }
            _ => break,
        }
    }
}

impl<T: Scalar> MeasureSource<T> for OmegaMeasure<T> {
    fn support_floor(&self) -> BigRational {
        BigRational::from_integer(BigInt::from(self.ctx.theta))
    }

    fn atom(&self, index: usize) -> MeasureResult<Option<Atom<T>>> {
        Ok(self.atoms(index + 1)?.pop())
    }

    fn atoms(&self, count: usize) -> MeasureResult<Vec<Atom<T>>> {
        let norm = self.norm(self.ctx.atom_effort)?;
        Ok(self.locate_all(count).iter().map(|(y, i)| self.atom_of(y, *i, &norm)).collect())
    }

    fn moment(&self, degree: i32, budget: &Budget) -> MeasureResult<MomentValue<T>> {
        let effort = Effort::for_budget(budget);
        let norm = self.norm(effort)?;
        if degree > self.ctx.n as i32 {
            let norm_hi = norm.hi().to_rational();
            return Ok(MomentValue::Divergent(self.ctx.certificate(&self.x, degree, norm_hi)));
        }
        let value = self.ctx.integral(&self.x, self.tilt() + degree, effort)?;
        Ok(MomentValue::Finite(&value / &norm))
    }

    fn mass_by_allocation(&self, support: &BigRational) -> Option<MeasureResult<Interval<T>>> {
        let Some((y, i)) = self.ctx.owner_of(support) else {
            return Some(Ok(Interval::zero()));
        };
        if !self.ctx.omega_contains(&y, i, &self.x) {
            return Some(Ok(Interval::zero()));
        }
        Some(self.norm(self.ctx.atom_effort).map(|norm| self.atom_of(&y, i, &norm).mass))
    }

    fn describe(&self) -> String {
        let word: Vec<String> = self.x.iter().map(|p| p.to_string()).collect();
        if self.normalized {
            format!("μ[{} : {}]", self.ctx.subtree, word.join("."))
        } else {
            format!("ν[{}]", self.ctx.subtree)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;

    type Q = BigRational;

    fn ctx(n: u32) -> Arc<SubtreeContext<Q>> {
        SubtreeContext::new(SubtreeId::ANCHOR, n, Effort::DEFAULT)
    }

    #[test]
    fn scaling_examples() {
        let c = ctx(1);
        assert_eq!(c.scale(&[]), ratio(1, 2));
        assert_eq!(c.scale(&[1]), ratio(1, 4));
        // ∫ s^{k+n} dν_x = c_x exactly
        let g = c.nu_component(&[1]);
        assert_eq!(g.partial_sum(2, 10) + g.tail_bounds(2, 10).unwrap().0, ratio(1, 4));
    }

    #[test]
    fn deep_words_with_tiny_scales_still_integrate() {
        // c_x is far below 2^-4096 here
        let c = ctx(2);
        let x = [3u64, 3, 3, 3];
        assert!(c.scale(&x) < dyadic(4096));
        let w = c.lambda_sq(&x, Effort::DEFAULT).unwrap();
        assert!(w.lo().is_positive());
    }

    #[test]
    fn t_points() {
        let c = ctx(1);
        assert_eq!(c.t_point(&[1]), Some((vec![], 1)));
        assert_eq!(c.t_point(&[2, 1]), c.t_point(&[2]));
        assert_eq!(c.t_point(&[2, 2]), Some((vec![2], 1)));
        assert_eq!(c.t_point(&[3, 1, 1]), Some((vec![], 3)));
        assert_eq!(c.t_point(&[3, 2, 1, 4]), Some((vec![3, 2, 1], 3)));
    }

    #[test]
    fn omega_membership() {
        let c = ctx(1);
        assert!(c.omega_contains(&[3, 2], 5, &[3]));
        assert!(!c.omega_contains(&[3, 2], 5, &[4]));
        assert!(c.omega_contains(&[], 1, &[1]));
        assert!(c.omega_contains(&[], 1, &[1, 1, 1]));
        assert!(!c.omega_contains(&[], 1, &[1, 2]));
        // t_x itself is routed into Ω_x
        for x in [vec![2u64], vec![2, 1], vec![2, 3], vec![1, 4, 1], vec![5, 1, 2]] {
            let (y, i) = c.t_point(&x).unwrap();
            assert!(c.omega_contains(&y, i, &x), "{x:?}");
        }
    }

    #[test]
    fn owners_decode() {
        let c = ctx(2);
        for (y, i) in [(vec![], 3u64), (vec![2, 1], 7), (vec![4], 1)] {
            let t = c.nu_component(&y).support(i);
            assert_eq!(c.owner_of(&t), Some((y, i)));
        }
        let other: Arc<SubtreeContext<Q>> = SubtreeContext::new(SubtreeId { chain: 1, sibling: 1 }, 2, Effort::DEFAULT);
        let t = other.nu_component(&[]).support(1);
        assert_eq!(c.owner_of(&t), None);
    }

    #[test]
    fn root_integral_is_bounded_by_two() {
        for n in [1, 2] {
            let c = ctx(n);
            let v = c.integral(&[], n as i32, Effort::DEFAULT).unwrap();
            assert!(v.hi() <= &ratio(2, 1));
            assert!(v.lo() >= &ratio(1, 2));
            assert!(v.width() < ratio(1, 1 << 20));
        }
    }

    #[test]
    fn children_partition_the_parent_integral() {
        let c = ctx(1);
        let e = Effort::DEFAULT;
        let whole = c.integral(&[], 0, e).unwrap();
        // Ω_0 = ⊔ Ω_(j): the first few children plus a crude remainder bound
        let mut parts = Interval::<Q>::zero();
        for j in 1..=40u64 {
            parts = &parts + &c.integral(&[j], 0, e).unwrap();
        }
        assert!(parts.hi() <= whole.hi());
        assert!(whole.lo() - parts.hi() < ratio(1, 20));
    }

    #[test]
    fn mu_is_a_probability_measure() {
        let c = ctx(1);
        for x in [vec![], vec![1u64], vec![1, 1], vec![3, 2]] {
            let mu = c.mu(&x);
            let m0 = mu.moment(0, &ratio(1, 1 << 16), 256).unwrap();
            assert!(m0.finite().unwrap().contains(&ratio(1, 1)));
            assert!(mu.moment(1, &ratio(1, 1 << 16), 256).unwrap().is_finite());
            let cert = mu.moment(2, &ratio(1, 1 << 16), 256).unwrap();
            assert!(cert.certificate().unwrap().verify(&ratio(10, 1)).passed);
        }
    }

    #[test]
    fn atom_masses_match_lookup() {
        let c = ctx(1);
        let mu = c.mu(&[2]);
        for a in mu.atoms(20).unwrap() {
            assert_eq!(mu.mass_at(&a.support, 1).unwrap(), a.mass);
        }
        let foreign = c.nu_component(&[3]).support(1);
        assert_eq!(mu.mass_at(&foreign, 1).unwrap(), Interval::zero());
    }
}
