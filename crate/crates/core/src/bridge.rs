//! The composition-operator picture: point masses `m(v)` on the vertices with
//! `φ = pa`, fixed by `m(anchor) = 1` and `m(v) = λ_v² m(pa v)`.
//!
//! Masses below the anchor are built downward, masses of its ancestors upward
//! (`m(pa v) = m(v) / λ_v²`), and every other vertex downward from the
//! nearest ancestor already reached.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use num_rational::BigRational;
use serde_json::{json, Value};

use crate::construction::model::ShiftModel;
use crate::interval::Interval;
use crate::measure::{MeasureError, MeasureResult, MomentValue};
use crate::scalar::Scalar;
use crate::tree::VertexAddress;
use crate::verification::{path_sum, Entry, Verdict};

pub struct CompositionModel<T: Scalar> {
    model: ShiftModel<T>,
    anchor: VertexAddress,
    masses: Mutex<HashMap<VertexAddress, Interval<T>>>,
    factors: BTreeMap<VertexAddress, BigRational>,
}

/// Whether `a` is `b` or one of its ancestors.
pub fn is_ancestor_or_self<T: Scalar>(model: &ShiftModel<T>, a: &VertexAddress, b: &VertexAddress) -> bool {
    let mut cur = b.clone();
    loop {
        if cur == *a {
            return true;
        }
        // parents only move up the chain, so once past `a`'s height there is no way back
        if cur.ancestor_index() > a.ancestor_index() || (cur.path().len() < a.path().len() && cur.ancestor_index() == a.ancestor_index()) {
            return false;
        }
        match model.parent(&cur) {
            Some(p) => cur = p,
            None => return false,
        }
    }
}

pub fn to_composition<T: Scalar>(model: &ShiftModel<T>, anchor: &VertexAddress) -> CompositionModel<T> {
    CompositionModel {
        model: model.clone(),
        anchor: anchor.clone(),
        masses: Mutex::new(HashMap::new()),
        factors: BTreeMap::new(),
    }
}

impl<T: Scalar> CompositionModel<T> {
    pub fn anchor(&self) -> &VertexAddress {
        &self.anchor
    }

    pub fn order(&self) -> u32 {
        self.model.order()
    }

    /// `φ(v) = pa v`.
    pub fn transform(&self, v: &VertexAddress) -> Option<VertexAddress> {
        self.model.parent(v)
    }

    /// Same model with `m(v)` multiplied by `factor` (mutation testing).
    pub fn with_mass_factor(&self, v: &VertexAddress, factor: BigRational) -> Self {
        let mut factors = self.factors.clone();
        factors.insert(v.clone(), factor);
        Self { model: self.model.clone(), anchor: self.anchor.clone(), masses: Mutex::new(HashMap::new()), factors }
    }

    fn raw_mass(&self, v: &VertexAddress) -> MeasureResult<Interval<T>> {
        if let Some(hit) = self.masses.lock().unwrap().get(v) {
            return Ok(hit.clone());
        }
        let value = if *v == self.anchor {
            Interval::one()
        } else if is_ancestor_or_self(&self.model, v, &self.anchor) {
            // v is strictly above the anchor: step down toward it
            let below = self.step_toward_anchor(v)?;
            &self.raw_mass(&below)? / &self.model.lambda_sq(&below)?
        } else {
            let parent = self
                .model
                .parent(v)
                .ok_or_else(|| MeasureError::InvalidArgument(format!("{v} is not connected to {}", self.anchor)))?;
            &self.model.lambda_sq(v)? * &self.raw_mass(&parent)?
        };
        self.masses.lock().unwrap().insert(v.clone(), value.clone());
        Ok(value)
    }

    /// The child of `v` on the way down to the anchor.
    fn step_toward_anchor(&self, v: &VertexAddress) -> MeasureResult<VertexAddress> {
        let mut cur = self.anchor.clone();
        loop {
            let p = self.model.parent(&cur).ok_or_else(|| MeasureError::InvalidArgument(format!("{v} is not above the anchor")))?;
            if p == *v {
                return Ok(cur);
            }
            cur = p;
        }
    }

    /// `m(v)`.
    pub fn point_mass(&self, v: &VertexAddress) -> MeasureResult<Interval<T>> {
        let raw = self.raw_mass(v)?;
        Ok(match self.factors.get(v) {
            Some(f) => raw.scale_rational(f),
            None => raw,
        })
    }

    pub fn entry_json(&self, v: &VertexAddress) -> MeasureResult<Value> {
        Ok(json!({
            "vertex": v.to_string(),
            "point_mass": self.point_mass(v)?.to_json(),
            "parent": self.transform(v).map(|p| p.to_string()),
        }))
    }
}

/// `Σ_{v ∈ Chi^k(u)} m(v) / m(u)` over the first `breadth` children per step.
pub fn composition_power_sum<T: Scalar>(cm: &CompositionModel<T>, u: &VertexAddress, k: u32, breadth: usize) -> MeasureResult<MomentValue<T>> {
    if k == 0 {
        return Ok(MomentValue::Finite(Interval::one()));
    }
    if k > cm.order() {
        // the k-step mass ratio is the degree-k moment of μ_u, so its certificate carries over
        return path_sum(&cm.model, u, k, breadth);
    }
    let mut layer = vec![u.clone()];
    for _ in 0..k {
        layer = layer.iter().flat_map(|v| cm.model.children(v, breadth)).collect();
    }
    layer.sort();
    let base = cm.point_mass(u)?;
    let mut sum = Interval::zero();
    for v in &layer {
        sum = &sum + &cm.point_mass(v)?;
    }
    Ok(MomentValue::Finite(&sum / &base))
}

/// `m(v) / m(u)` against `Π λ²` along the path from `u` down to `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Telescoping {
    /// `m(v) = Π λ² · m(u)` as identical intervals.
    Exact,
    /// The two enclosures overlap (the recursion ran upward somewhere on the path).
    Enclosed,
    Broken,
}

pub fn telescoping<T: Scalar>(cm: &CompositionModel<T>, u: &VertexAddress, v: &VertexAddress) -> MeasureResult<Telescoping> {
    let mut path = vec![v.clone()];
    while path.last() != Some(u) {
        let p = cm
            .model
            .parent(path.last().unwrap())
            .ok_or_else(|| MeasureError::InvalidArgument(format!("{u} is not an ancestor of {v}")))?;
        if p.ancestor_index() > u.ancestor_index() + 1 {
            return Err(MeasureError::InvalidArgument(format!("{u} is not an ancestor of {v}")));
        }
        path.push(p);
    }
    path.pop();
    let mut acc = cm.point_mass(u)?;
    for w in path.iter().rev() {
        acc = &cm.model.lambda_sq(w)? * &acc;
    }
    let m = cm.point_mass(v)?;
    Ok(if acc == m {
        Telescoping::Exact
    } else if acc.overlaps(&m) {
        Telescoping::Enclosed
    } else {
        Telescoping::Broken
    })
}

/// `composition_power_sum` against `path_sum`.
pub fn equivalence_check<T: Scalar>(model: &ShiftModel<T>, cm: &CompositionModel<T>, u: &VertexAddress, k: u32, breadth: usize) -> Entry {
    let pair = composition_power_sum(cm, u, k, breadth).and_then(|c| Ok((c, path_sum(model, u, k, breadth)?)));
    let (verdict, data) = match pair {
        Ok((MomentValue::Finite(c), MomentValue::Finite(p))) => {
            (if c.overlaps(&p) { Verdict::Pass } else { Verdict::Fail }, json!({ "composition": c.to_json(), "path_sum": p.to_json() }))
        }
        Ok((MomentValue::Divergent(a), MomentValue::Divergent(b))) => {
            (Verdict::Pass, json!({ "composition": a.to_json(), "path_sum": b.to_json() }))
        }
        Ok((c, p)) => (Verdict::Fail, json!({ "composition": c.to_json(), "path_sum": p.to_json() })),
        Err(e) => {
            let v = match e {
                MeasureError::PrecisionUnreachable { .. } | MeasureError::Unresolved(_) => Verdict::Unresolved,
                _ => Verdict::Fail,
            };
            (v, json!({ "error": e.to_string() }))
        }
    };
    Entry { vertex: u.clone(), check: "equivalence".into(), verdict, data: json!({ "k": k, "breadth": breadth, "values": data }) }
}

/// Ancestor/descendant pairs `(u, v)` below `top`, `v` within `depth`
/// generations of `u` using the first `breadth` children, first `count` in BFS order.
pub fn sample_paths<T: Scalar>(model: &ShiftModel<T>, top: &VertexAddress, depth: usize, breadth: usize, count: usize) -> Vec<(VertexAddress, VertexAddress)> {
    let mut out = Vec::new();
    let mut frontier = vec![(top.clone(), vec![top.clone()])];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (v, line) in &frontier {
            for c in model.children(v, breadth) {
                for u in line {
                    out.push((u.clone(), c.clone()));
                }
                let mut l = line.clone();
                l.push(c.clone());
                next.push((c, l));
            }
        }
        frontier = next;
    }
    out.truncate(count);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::model::assemble;
    use crate::scalar::ratio;

    type Q = BigRational;

    fn v(j: u64, p: &[u64]) -> VertexAddress {
        VertexAddress::rootless(j, p).unwrap()
    }

    #[test]
    fn anchor_has_unit_mass() {
        let m = assemble::<Q>(1, true);
        let cm = to_composition(&m, &VertexAddress::anchor());
        assert_eq!(cm.point_mass(&VertexAddress::anchor()).unwrap(), Interval::one());
    }

    #[test]
    fn child_mass_is_its_weight() {
        let m = assemble::<Q>(1, true);
        let cm = to_composition(&m, &VertexAddress::anchor());
        for j in 1..=3 {
            let c = v(0, &[j]);
            assert_eq!(cm.point_mass(&c).unwrap(), m.lambda_sq(&c).unwrap());
        }
    }

    #[test]
    fn degree_zero_sum_is_one() {
        let m = assemble::<f64>(1, true);
        let cm = to_composition(&m, &VertexAddress::anchor());
        let s = composition_power_sum(&cm, &VertexAddress::anchor(), 0, 3).unwrap();
        assert_eq!(s.finite().unwrap(), &Interval::one());
    }

    #[test]
    fn ancestry() {
        let m = assemble::<f64>(1, false);
        assert!(is_ancestor_or_self(&m, &v(2, &[]), &v(0, &[3])));
        assert!(is_ancestor_or_self(&m, &v(1, &[2]), &v(1, &[2, 5])));
        assert!(!is_ancestor_or_self(&m, &v(1, &[2]), &v(0, &[])));
        assert!(!is_ancestor_or_self(&m, &v(0, &[1]), &v(1, &[])));
    }

    #[test]
    fn sampled_paths_are_ancestor_pairs() {
        let m = assemble::<f64>(1, true);
        let paths = sample_paths(&m, &VertexAddress::anchor(), 3, 3, 100);
        assert_eq!(paths.len(), 100);
        for (u, w) in &paths {
            assert!(u != w && is_ancestor_or_self(&m, u, w));
        }
    }

    #[test]
    fn perturbed_mass_breaks_equivalence() {
        let m = assemble::<f64>(1, true);
        let root = VertexAddress::anchor();
        let cm = to_composition(&m, &root).with_mass_factor(&v(0, &[2]), ratio(3, 2));
        assert_eq!(equivalence_check(&m, &cm, &root, 1, 3).verdict, Verdict::Fail);
    }
}
