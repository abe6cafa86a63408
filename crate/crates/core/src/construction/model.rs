//! The assembled model: squared weights and measures for every vertex of the
//! rooted or rootless extremal tree, resolved lazily.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};

use super::allocator::SubtreeId;
use super::context::{Effort, SubtreeContext};
use super::rootless::{theta, Below, ChainLevel};
use crate::interval::Interval;
use crate::measure::{Budget, DiscreteMeasure, MeasureError, MeasureResult, MomentValue};
use crate::scalar::{dyadic, format_rational, Scalar};
use crate::tree::{self, TreeShape, VertexAddress};

pub const DEFAULT_HORIZON: usize = 256;
pub const DEFAULT_PRECISION_BITS: u64 = 16;
/// Chain levels feed each other, so they work this many bits below the model tolerance.
const CHAIN_GUARD_BITS: u64 = 4;

/// Where a vertex lives in the construction.
#[derive(Clone)]
pub enum Role<T: Scalar> {
    /// Word `word` of a rooted subtree context.
    Context { ctx: Arc<SubtreeContext<T>>, word: Vec<u64> },
    /// The chain vertex `x_j`, `j >= 1`.
    Chain(Arc<ChainLevel<T>>),
}

#[derive(Clone)]
pub struct ShiftModel<T: Scalar> {
    n: u32,
    shape: TreeShape,
    budget: Budget,
    effort: Effort,
    anchor: Arc<SubtreeContext<T>>,
    chain: Arc<Mutex<Vec<Arc<ChainLevel<T>>>>>,
    factors: BTreeMap<VertexAddress, BigRational>,
}

impl<T: Scalar> std::fmt::Debug for ShiftModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ShiftModel(n={}, rooted={})", self.n, self.shape.rooted)
    }
}

/// Model with the default horizon (256 atoms) and precision `2^-16`.
pub fn assemble<T: Scalar>(n: u32, rooted: bool) -> ShiftModel<T> {
    ShiftModel::new(n, rooted, Budget::new(DEFAULT_HORIZON, dyadic(DEFAULT_PRECISION_BITS)))
}

impl<T: Scalar> ShiftModel<T> {
    pub fn new(n: u32, rooted: bool, budget: Budget) -> Self {
        assert!(n >= 1, "order n must be positive");
        let effort = Effort::for_budget(&budget);
        Self {
            n,
            shape: if rooted { TreeShape::ROOTED } else { TreeShape::ROOTLESS },
            anchor: SubtreeContext::new(SubtreeId::ANCHOR, n, effort),
            budget,
            effort,
            chain: Arc::new(Mutex::new(Vec::new())),
            factors: BTreeMap::new(),
        }
    }

    pub fn order(&self) -> u32 {
        self.n
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn effort(&self) -> Effort {
        self.effort
    }

    pub fn anchor_context(&self) -> &Arc<SubtreeContext<T>> {
        &self.anchor
    }

    /// `x_j`, built on first use together with every level below it.
    pub fn chain_level(&self, j: u64) -> Arc<ChainLevel<T>> {
        assert!(j >= 1 && !self.shape.rooted);
        let mut levels = self.chain.lock().unwrap();
        while (levels.len() as u64) < j {
            let below = match levels.last() {
                None => Below::Anchor(self.anchor.clone()),
                Some(prev) => Below::Chain(prev.clone()),
            };
            let tight = self.budget.with_tolerance(&self.budget.tolerance * dyadic(CHAIN_GUARD_BITS));
            let next = ChainLevel::new(levels.len() as u64 + 1, self.n, tight, below);
            levels.push(next);
        }
        levels[j as usize - 1].clone()
    }

    fn check_shape(&self, v: &VertexAddress) -> MeasureResult<()> {
        if self.shape.rooted && (v.ancestor_index() != 0 || v.path().contains(&0)) {
            return Err(MeasureError::InvalidArgument(format!("{v} is not a rooted address")));
        }
        Ok(())
    }

    pub fn role(&self, v: &VertexAddress) -> MeasureResult<Role<T>> {
        self.check_shape(v)?;
        let j = v.ancestor_index();
        let path = v.path();
        Ok(if j == 0 {
            Role::Context { ctx: self.anchor.clone(), word: path.to_vec() }
        } else if path.is_empty() {
            Role::Chain(self.chain_level(j))
        } else {
            Role::Context { ctx: self.chain_level(j).sibling(path[0]), word: path[1..].to_vec() }
        })
    }

    fn raw_lambda_sq(&self, v: &VertexAddress) -> MeasureResult<Interval<T>> {
        self.check_shape(v)?;
        let j = v.ancestor_index();
        let path = v.path();
        match (path.len(), self.shape.rooted) {
            (0, true) => Err(MeasureError::InvalidArgument("the root carries no weight".into())),
            (0, false) => self.chain_level(j + 1).lambda_sq(0),
            (1, _) if j >= 1 => self.chain_level(j).lambda_sq(path[0]),
            _ => match self.role(v)? {
                Role::Context { ctx, word } => ctx.lambda_sq(&word, self.effort),
                Role::Chain(_) => unreachable!("chain vertices have empty paths"),
            },
        }
    }

    /// `λ_v²`.
    pub fn lambda_sq(&self, v: &VertexAddress) -> MeasureResult<Interval<T>> {
        let raw = self.raw_lambda_sq(v)?;
        Ok(match self.factors.get(v) {
            Some(f) => raw.scale_rational(f),
            None => raw,
        })
    }

    /// `μ_v`.
    pub fn mu(&self, v: &VertexAddress) -> MeasureResult<DiscreteMeasure<T>> {
        match self.role(v)? {
            Role::Context { ctx, word } => Ok(ctx.mu(&word)),
            Role::Chain(level) => level.measure(),
        }
    }

    /// `ε_v`, identically zero.
    pub fn epsilon(&self, _v: &VertexAddress) -> BigRational {
        BigRational::from_integer(0.into())
    }

    pub fn parent(&self, v: &VertexAddress) -> Option<VertexAddress> {
        tree::parent(self.shape, v)
    }

    pub fn children(&self, v: &VertexAddress, count: usize) -> Vec<VertexAddress> {
        tree::children(self.shape, v, count)
    }

    pub fn truncation(&self, depth: usize, breadth: usize) -> Vec<VertexAddress> {
        tree::truncation(self.shape, depth, breadth)
    }

    /// The child of `u` whose measure holds the atom at `support`, or `None`
    /// when `μ_u` has no atom there.
    pub fn owning_child(&self, u: &VertexAddress, support: &BigRational) -> MeasureResult<Option<VertexAddress>> {
        let j = u.ancestor_index();
        match self.role(u)? {
            Role::Context { ctx, word } => {
                let Some((y, i)) = ctx.owner_of(support) else { return Ok(None) };
                if !ctx.omega_contains(&y, i, &word) {
                    return Ok(None);
                }
                let child = ctx.owning_child(&y, i, &word);
                let mut path = u.path().to_vec();
                path.push(*child.last().unwrap());
                Ok(Some(rebuild(j, path)))
            }
            Role::Chain(level) => Ok(level.owner(support).map(|i| {
                if i == 0 {
                    rebuild(j - 1, Vec::new())
                } else {
                    rebuild(j, vec![i])
                }
            })),
        }
    }

    /// Index of `child` among the children of its parent (`w_0` is 0 in the chain).
    pub fn child_index(&self, child: &VertexAddress) -> u64 {
        if child.path().is_empty() {
            0
        } else {
            *child.path().last().unwrap()
        }
    }

    /// Upper bound of `Σ λ_c² ∫ s^{-1} dμ_c` over the children of `u` past the first `count`.
    pub fn children_mass_tail(&self, u: &VertexAddress, count: u64) -> MeasureResult<BigRational> {
        match self.role(u)? {
            Role::Context { ctx, word } => ctx.children_mass_tail(&word, count.max(1), self.effort),
            Role::Chain(level) => level.mass_tail(count.max(1)),
        }
    }

    /// Same model with `λ_v²` multiplied by `factor` (mutation testing).
    pub fn with_lambda_factor(&self, v: &VertexAddress, factor: BigRational) -> Self {
        assert!(factor.is_positive());
        let mut out = self.clone();
        out.factors.insert(v.clone(), factor);
        out
    }

    /// Certified `∫ s^d dν` of the anchor context before normalization.
    pub fn nu_moment(&self, degree: i32) -> MeasureResult<MomentValue<T>> {
        self.anchor.nu().moment_with(degree, &self.budget)
    }

    pub fn theta_sequence(&self, len: usize) -> Vec<u64> {
        (0..len as u64).map(theta).collect()
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "rooted": self.shape.rooted,
            "theta_sequence": if self.shape.rooted { vec![1] } else { self.theta_sequence(8) },
            "pairing": "cantor",
            "mass_recipe": "telescoping",
            "scaling": "dyadic",
            "horizon": self.budget.horizon,
            "precision": format_rational(&self.budget.tolerance),
            "effort_bits": self.effort.bits,
        })
    }

    /// Largest `λ²` width among `vertices`, as a float, for diagnostics.
    pub fn widest_weight(&self, vertices: &[VertexAddress]) -> MeasureResult<f64> {
        let mut widest = 0.0f64;
        for v in vertices {
            if self.shape.rooted && v.is_anchor() {
                continue;
            }
            let w = self.lambda_sq(v)?.width().to_rational().to_f64().unwrap_or(f64::INFINITY);
            widest = widest.max(w);
        }
        Ok(widest)
    }
}

fn rebuild(j: u64, path: Vec<u64>) -> VertexAddress {
    VertexAddress::rootless(j, &path).expect("constructed addresses are canonical")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;

    type Q = BigRational;

    fn v(j: u64, p: &[u64]) -> VertexAddress {
        VertexAddress::rootless(j, p).unwrap()
    }

    #[test]
    fn rooted_root_has_no_weight() {
        let m = assemble::<Q>(1, true);
        assert!(m.lambda_sq(&VertexAddress::anchor()).is_err());
        assert!(m.lambda_sq(&v(1, &[])).is_err());
    }

    #[test]
    fn root_measure_is_normalized() {
        let m = assemble::<Q>(1, true);
        let total = m.mu(&VertexAddress::anchor()).unwrap().total_mass(&ratio(1, 1000), 256).unwrap();
        assert!(total.finite().unwrap().contains(&Q::from_integer(1.into())));
    }

    #[test]
    fn rootless_roles_resolve() {
        let m = assemble::<f64>(2, false);
        assert!(matches!(m.role(&v(0, &[])).unwrap(), Role::Context { .. }));
        assert!(matches!(m.role(&v(1, &[])).unwrap(), Role::Chain(_)));
        match m.role(&v(2, &[3, 1])).unwrap() {
            Role::Context { ctx, word } => {
                assert_eq!(ctx.theta(), 16);
                assert_eq!(word, vec![1]);
            }
            Role::Chain(_) => panic!("sibling word expected"),
        }
    }

    #[test]
    fn first_weights_are_positive() {
        let m = assemble::<Q>(1, true);
        for j in 1..=3 {
            assert!(m.lambda_sq(&v(0, &[j])).unwrap().is_positive());
        }
    }

    #[test]
    fn mutation_only_touches_one_vertex() {
        let m = assemble::<f64>(1, true);
        let target = v(0, &[2]);
        let halved = m.with_lambda_factor(&target, ratio(1, 2));
        let a = m.lambda_sq(&target).unwrap();
        let b = halved.lambda_sq(&target).unwrap();
        assert!(b.hi() < a.lo());
        assert_eq!(m.lambda_sq(&v(0, &[1])).unwrap(), halved.lambda_sq(&v(0, &[1])).unwrap());
    }

    #[test]
    fn owners_of_root_atoms_are_children() {
        let m = assemble::<f64>(1, true);
        let root = VertexAddress::anchor();
        for atom in m.mu(&root).unwrap().atoms(20).unwrap() {
            let child = m.owning_child(&root, &atom.support).unwrap().expect("every atom has an owner");
            assert_eq!(m.parent(&child), Some(root.clone()));
        }
    }

    #[test]
    fn manifest_fields() {
        let m = assemble::<Q>(2, false);
        let doc = m.manifest();
        assert_eq!(doc["theta_sequence"].as_array().unwrap()[..3], [1, 4, 9]);
        assert_eq!(doc["pairing"], "cantor");
    }
}
