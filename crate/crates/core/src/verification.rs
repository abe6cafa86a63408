//! Certified checks on finite truncations of an assembled model.
//!
//! Every check produces [`Entry`] records `{vertex, check, verdict, data}`.
//! A pass on a truncation is evidence about the enumerated vertices only;
//! the statement for the whole infinite tree is the analytic one.

use std::collections::{BTreeMap, HashMap};

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::construction::model::ShiftModel;
use crate::interval::Interval;
use crate::measure::{MeasureError, MeasureResult, MomentValue};
use crate::scalar::{format_rational, ratio, Scalar};
use crate::tree::VertexAddress;

/// Bound used when validating divergence certificates in verdicts.
pub const CERTIFICATE_BOUND: i64 = 100;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SHIFTFORGE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Pass,
    Fail,
    /// Precision or horizon too small to decide.
    Unresolved,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Unresolved => "unresolved",
        }
    }

    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    fn from_error(e: &MeasureError) -> Self {
        match e {
            MeasureError::PrecisionUnreachable { .. } | MeasureError::Unresolved(_) => Verdict::Unresolved,
            _ => Verdict::Fail,
        }
    }

    /// Worst of a collection: any fail wins, then any unresolved.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        let mut out = Verdict::Pass;
        for v in verdicts {
            out = match (out, v) {
                (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
                (Verdict::Unresolved, _) | (_, Verdict::Unresolved) => Verdict::Unresolved,
                _ => Verdict::Pass,
            };
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub vertex: VertexAddress,
    pub check: String,
    pub verdict: Verdict,
    pub data: Value,
}

impl Entry {
    pub fn to_json(&self) -> Value {
        json!({
            "vertex": self.vertex.to_string(),
            "check": self.check,
            "verdict": self.verdict.as_str(),
            "data": self.data,
        })
    }

    fn error(vertex: &VertexAddress, check: &str, e: &MeasureError) -> Self {
        Entry {
            vertex: vertex.clone(),
            check: check.into(),
            verdict: Verdict::from_error(e),
            data: json!({ "error": e.to_string() }),
        }
    }
}

/// Runs `f` on a rayon pool sized by `SHIFTFORGE_THREADS` when set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn par_entries(vertices: &[VertexAddress], f: impl Fn(&VertexAddress) -> Entry + Send + Sync) -> Vec<Entry> {
    vertices.par_iter().map(f).collect()
}

/// A finitely supported vector with signed coefficients, tracked as
/// `(sign, coefficient²)` so the shift stays in rational arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteVector<T> {
    entries: BTreeMap<VertexAddress, (i8, Interval<T>)>,
}

impl<T: Scalar> Default for FiniteVector<T> {
    fn default() -> Self {
        Self { entries: BTreeMap::new() }
    }
}

impl<T: Scalar> FiniteVector<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `e_u`.
    pub fn basis(u: VertexAddress) -> Self {
        let mut out = Self::zero();
        out.entries.insert(u, (1, Interval::one()));
        out
    }

    /// From exact coefficients; zero coefficients are dropped, repeated addresses rejected.
    pub fn from_coefficients(items: &[(VertexAddress, BigRational)]) -> MeasureResult<Self> {
        let mut out = Self::zero();
        for (v, c) in items {
            if c.is_zero() {
                continue;
            }
            let sign = if c.is_negative() { -1 } else { 1 };
            if out.entries.insert(v.clone(), (sign, Interval::from_rational(&(c * c)))).is_some() {
                return Err(MeasureError::InvalidArgument(format!("vertex {v} listed twice")));
            }
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = &VertexAddress> {
        self.entries.keys()
    }

    /// `(sign, coefficient²)` at `v`.
    pub fn get(&self, v: &VertexAddress) -> Option<&(i8, Interval<T>)> {
        self.entries.get(v)
    }

    /// `Σ |f(v)|²` in address order.
    pub fn norm_sq(&self) -> Interval<T> {
        self.entries.values().fold(Interval::zero(), |acc, (_, sq)| &acc + sq)
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.entries
                .iter()
                .map(|(v, (s, sq))| json!({ "vertex": v.to_string(), "sign": s, "square": sq.to_json() }))
                .collect(),
        )
    }
}

/// `(Λ f)(v) = λ_v f(pa v)` on the first `breadth` children of each support vertex.
pub fn apply_shift<T: Scalar>(model: &ShiftModel<T>, f: &FiniteVector<T>, breadth: usize) -> MeasureResult<FiniteVector<T>> {
    if breadth == 0 {
        return Err(MeasureError::InvalidArgument("breadth must be positive".into()));
    }
    let mut out = FiniteVector::zero();
    for (u, (sign, sq)) in &f.entries {
        for v in model.children(u, breadth) {
            let lam = model.lambda_sq(&v)?;
            out.entries.insert(v, (*sign, &lam * sq));
        }
    }
    Ok(out)
}

/// `Σ_{v ∈ Chi^k(u)} Π λ²` over the first `breadth` children at each step.
///
/// `Finite` holds the partial sum, which is a certified lower bound of
/// `∫ s^k dμ_u`. Past the finite range the identity with the moment
/// transports the divergence certificate of `μ_u`.
pub fn path_sum<T: Scalar>(model: &ShiftModel<T>, u: &VertexAddress, k: u32, breadth: usize) -> MeasureResult<MomentValue<T>> {
    if k == 0 {
        return Ok(MomentValue::Finite(Interval::one()));
    }
    if k > model.order() {
        return model.mu(u)?.moment_raw(k as i32, model.budget());
    }
    let mut layer: BTreeMap<VertexAddress, Interval<T>> = BTreeMap::new();
    layer.insert(u.clone(), Interval::one());
    for _ in 0..k {
        let mut next = BTreeMap::new();
        for (v, prod) in &layer {
            for c in model.children(v, breadth) {
                let lam = model.lambda_sq(&c)?;
                next.insert(c, &lam * prod);
            }
        }
        layer = next;
    }
    Ok(MomentValue::Finite(layer.values().fold(Interval::zero(), |acc, x| &acc + x)))
}

/// One atom of a consistency check.
#[derive(Debug, Clone)]
pub struct AtomResidual<T> {
    pub support: BigRational,
    pub child: VertexAddress,
    pub residual: Interval<T>,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport<T> {
    pub vertex: VertexAddress,
    pub horizon: usize,
    pub tolerance: BigRational,
    pub residuals: Vec<AtomResidual<T>>,
    /// Children counted before the coefficient tail takes over.
    pub children_counted: u64,
    pub tail_bound: BigRational,
    pub verdict: Verdict,
}

impl<T: Scalar> ConsistencyReport<T> {
    fn decide(residuals: &[AtomResidual<T>], tail: &BigRational, tolerance: &BigRational) -> Verdict {
        Verdict::of(residuals.iter().all(|r| r.residual.contains_zero()) && tail <= tolerance)
    }

    /// Residual with the largest magnitude bound.
    pub fn worst(&self) -> Option<&AtomResidual<T>> {
        self.residuals.iter().max_by(|a, b| {
            let ma = magnitude(&a.residual);
            let mb = magnitude(&b.residual);
            ma.cmp(&mb)
        })
    }

    pub fn entry(&self) -> Entry {
        let failing: Vec<Value> = self
            .residuals
            .iter()
            .filter(|r| !r.residual.contains_zero())
            .take(8)
            .map(|r| {
                json!({
                    "support": format_rational(&r.support),
                    "child": r.child.to_string(),
                    "residual": r.residual.to_json(),
                })
            })
            .collect();
        let worst = self.worst().map(|r| format!("{:.3e}", magnitude(&r.residual).to_f64_lossy()));
        Entry {
            vertex: self.vertex.clone(),
            check: "consistency".into(),
            verdict: self.verdict,
            data: json!({
                "horizon": self.horizon,
                "atoms": self.residuals.len(),
                "tolerance": format_rational(&self.tolerance),
                "children_counted": self.children_counted,
                "tail_bound": format_rational(&self.tail_bound),
                "max_residual": worst,
                "failing": failing,
            }),
        }
    }
}

trait Lossy {
    fn to_f64_lossy(&self) -> f64;
}

impl Lossy for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(self).unwrap_or(f64::INFINITY)
    }
}

fn magnitude<T: Scalar>(iv: &Interval<T>) -> BigRational {
    let (lo, hi) = iv.to_rationals();
    let (a, b) = (lo.abs(), hi.abs());
    if a > b {
        a
    } else {
        b
    }
}

/// Checks `μ_u(t) = λ_v² μ_v(t) / t` on the first `horizon` atoms of `μ_u`,
/// `v` the child owning `t`, plus the coefficient tail of unlisted children.
pub fn check_consistency<T: Scalar>(
    model: &ShiftModel<T>,
    u: &VertexAddress,
    horizon: usize,
    tolerance: &BigRational,
) -> MeasureResult<ConsistencyReport<T>> {
    if horizon == 0 {
        return Err(MeasureError::InvalidArgument("horizon must be positive".into()));
    }
    let mu = model.mu(u)?;
    let atoms = mu.atoms(horizon)?;
    let mut weights: HashMap<VertexAddress, Interval<T>> = HashMap::new();
    let mut residuals = Vec::with_capacity(atoms.len());
    for atom in &atoms {
        let child = model.owning_child(u, &atom.support)?.ok_or_else(|| {
            MeasureError::Unresolved(format!("atom at {} of μ({u}) has no owning child", format_rational(&atom.support)))
        })?;
        let lam = match weights.get(&child) {
            Some(l) => l.clone(),
            None => {
                let l = model.lambda_sq(&child)?;
                weights.insert(child.clone(), l.clone());
                l
            }
        };
        let child_mass = model.mu(&child)?.mass_at(&atom.support, horizon)?;
        let pushed = &(&lam * &child_mass) / &Interval::from_rational(&atom.support);
        residuals.push(AtomResidual { support: atom.support.clone(), child, residual: &atom.mass - &pushed });
    }
    let mut counted = 1u64;
    let mut tail = model.children_mass_tail(u, counted)?;
    while tail > *tolerance && counted < 1 << 40 {
        counted *= 2;
        tail = model.children_mass_tail(u, counted)?;
    }
    let verdict = ConsistencyReport::decide(&residuals, &tail, tolerance);
    Ok(ConsistencyReport {
        vertex: u.clone(),
        horizon,
        tolerance: tolerance.clone(),
        residuals,
        children_counted: counted,
        tail_bound: tail,
        verdict,
    })
}

/// Consistency entries for every vertex, evaluated in parallel.
pub fn consistency_suite<T: Scalar>(
    model: &ShiftModel<T>,
    vertices: &[VertexAddress],
    horizon: usize,
    tolerance: &BigRational,
) -> Vec<Entry> {
    par_entries(vertices, |u| match check_consistency(model, u, horizon, tolerance) {
        Ok(report) => report.entry(),
        Err(e) => Entry::error(u, "consistency", &e),
    })
}

/// `(∫ s^n dμ_u, ∫ s^{n+1} dμ_u)`.
pub fn moment_profile<T: Scalar>(model: &ShiftModel<T>, u: &VertexAddress) -> MeasureResult<(MomentValue<T>, MomentValue<T>)> {
    let mu = model.mu(u)?;
    let n = model.order() as i32;
    Ok((mu.moment_with(n, model.budget())?, mu.moment_with(n + 1, model.budget())?))
}

fn moment_entry<T: Scalar>(u: &VertexAddress, check: &str, degree: i32, value: &MomentValue<T>, want_finite: bool) -> Entry {
    let bound = ratio(CERTIFICATE_BOUND, 1);
    let (verdict, extra) = match value {
        MomentValue::Finite(iv) => (Verdict::of(want_finite && iv.is_nonnegative()), Value::Null),
        MomentValue::Divergent(cert) => {
            let check = cert.verify(&bound);
            let ok = !want_finite && check.passed;
            (
                Verdict::of(ok),
                json!({
                    "bound": CERTIFICATE_BOUND,
                    "index": check.index.to_string(),
                    "partial_sum_lower": format!("{:.6}", check.partial_sum_lower.to_f64_lossy()),
                    "passed": check.passed,
                    "witness": cert.description(),
                }),
            )
        }
    };
    Entry {
        vertex: u.clone(),
        check: check.into(),
        verdict,
        data: json!({ "degree": degree, "moment": value.to_json(), "certificate_check": extra }),
    }
}

/// Degree-`k` moments of every vertex must be finite.
pub fn power_dense_verdict<T: Scalar>(model: &ShiftModel<T>, k: u32, depth: usize, breadth: usize) -> Vec<Entry> {
    let vertices = model.truncation(depth, breadth);
    par_entries(&vertices, |u| match model.mu(u).and_then(|mu| mu.moment_with(k as i32, model.budget())) {
        Ok(value) => moment_entry(u, "power_dense", k as i32, &value, true),
        Err(e) => Entry::error(u, "power_dense", &e),
    })
}

/// Degree-`k` moments of every vertex must diverge, with certificates checked at `B = 100`.
pub fn trivial_domain_verdict<T: Scalar>(model: &ShiftModel<T>, k: u32, depth: usize, breadth: usize) -> Vec<Entry> {
    let vertices = model.truncation(depth, breadth);
    par_entries(&vertices, |u| match model.mu(u).and_then(|mu| mu.moment_with(k as i32, model.budget())) {
        Ok(value) => moment_entry(u, "trivial_domain", k as i32, &value, false),
        Err(e) => Entry::error(u, "trivial_domain", &e),
    })
}

/// Path sums against moment enclosures for `k = 0..=n`.
pub fn oracle_entry<T: Scalar>(model: &ShiftModel<T>, u: &VertexAddress, breadth: usize) -> Entry {
    let mut rows = Vec::new();
    let mut ok = true;
    for k in 0..=model.order() {
        let row = path_sum(model, u, k, breadth).and_then(|p| {
            let moment = model.mu(u)?.moment_with(k as i32, model.budget())?;
            Ok((p, moment))
        });
        match row {
            Ok((MomentValue::Finite(p), MomentValue::Finite(m))) => {
                let below = p.lo() <= m.hi();
                ok &= below;
                let gap = relative_gap(&p, &m);
                rows.push(json!({
                    "k": k,
                    "path_sum": p.to_json(),
                    "moment": m.to_json(),
                    "relative_gap": format!("{:.6e}", gap),
                    "consistent": below,
                }));
            }
            Ok(_) => {
                ok = false;
                rows.push(json!({ "k": k, "error": "unexpected divergence" }));
            }
            Err(e) => return Entry::error(u, "oracle", &e),
        }
    }
    Entry { vertex: u.clone(), check: "oracle".into(), verdict: Verdict::of(ok), data: json!({ "breadth": breadth, "rows": rows }) }
}

/// `(moment_hi - path_lo) / moment_hi`.
pub fn relative_gap<T: Scalar>(path: &Interval<T>, moment: &Interval<T>) -> f64 {
    let hi = moment.hi().to_rational();
    if hi.is_zero() {
        return 0.0;
    }
    ((&hi - path.lo().to_rational()) / &hi).to_f64_lossy()
}

/// Positive lower bounds of `λ²` on every non-root vertex.
pub fn injectivity_entries<T: Scalar>(model: &ShiftModel<T>, vertices: &[VertexAddress]) -> Vec<Entry> {
    let weighted: Vec<VertexAddress> =
        vertices.iter().filter(|v| !(model.shape().rooted && v.is_anchor())).cloned().collect();
    par_entries(&weighted, |v| match model.lambda_sq(v) {
        Ok(lam) => Entry {
            vertex: v.clone(),
            check: "injectivity".into(),
            verdict: Verdict::of(lam.is_positive()),
            data: json!({ "lambda_sq": lam.to_json() }),
        },
        Err(e) => Entry::error(v, "injectivity", &e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::model::assemble;

    type Q = BigRational;

    #[test]
    fn shift_of_zero_is_zero() {
        let m = assemble::<Q>(1, true);
        assert!(apply_shift(&m, &FiniteVector::zero(), 3).unwrap().is_zero());
    }

    #[test]
    fn shift_of_root_carries_child_weights() {
        let m = assemble::<Q>(1, true);
        let img = apply_shift(&m, &FiniteVector::basis(VertexAddress::anchor()), 2).unwrap();
        assert_eq!(img.len(), 2);
        for j in 1..=2 {
            let v = VertexAddress::rooted(&[j]).unwrap();
            assert_eq!(img.get(&v).unwrap().1, m.lambda_sq(&v).unwrap());
        }
    }

    #[test]
    fn path_sum_of_degree_zero_is_one() {
        let m = assemble::<f64>(2, false);
        let p = path_sum(&m, &VertexAddress::rootless(1, &[]).unwrap(), 0, 3).unwrap();
        assert_eq!(p.finite().unwrap(), &Interval::one());
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let m = assemble::<f64>(1, true);
        assert!(check_consistency(&m, &VertexAddress::anchor(), 0, &ratio(1, 1 << 16)).is_err());
    }

    #[test]
    fn verdicts_combine() {
        use Verdict::*;
        assert_eq!(Verdict::combine([Pass, Pass]), Pass);
        assert_eq!(Verdict::combine([Pass, Unresolved]), Unresolved);
        assert_eq!(Verdict::combine([Unresolved, Fail, Pass]), Fail);
    }

    #[test]
    fn signed_coefficients_keep_sign() {
        let u = VertexAddress::anchor();
        let f = FiniteVector::<Q>::from_coefficients(&[(u.clone(), ratio(-3, 2))]).unwrap();
        assert_eq!(f.get(&u).unwrap(), &(-1, Interval::from_rational(&ratio(9, 4))));
        assert!(FiniteVector::<Q>::from_coefficients(&[(u.clone(), ratio(1, 1)), (u, ratio(2, 1))]).is_err());
    }
}
