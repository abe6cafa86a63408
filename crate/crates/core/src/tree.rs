//! Addressing and navigation on the extremal directed trees.
//!
//! A vertex is named by an ancestor index `j` and a path. In the rooted tree
//! `j` is always 0 and paths are words over `1, 2, ...` (the index tree
//! `X = ⊔ ℕ^k`). In the rootless tree `(j, [])` is the `j`-th ancestor of the
//! anchor `(0, [])`, and the sibling index 0 below `(j, [])` is reserved for
//! `(j - 1, [])`; canonical addresses never start with that 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("malformed address: {0}")]
    Malformed(String),
}

/// Rooted or rootless extremal tree. Every vertex has countably many children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeShape {
    pub rooted: bool,
}

impl TreeShape {
    pub const ROOTED: TreeShape = TreeShape { rooted: true };
    pub const ROOTLESS: TreeShape = TreeShape { rooted: false };

    pub fn anchor(&self) -> VertexAddress {
        VertexAddress::anchor()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexAddress {
    ancestor: u64,
    path: Vec<u64>,
}

impl VertexAddress {
    /// The root (rooted tree) or the anchor `w_0` (rootless tree).
    pub fn anchor() -> Self {
        Self { ancestor: 0, path: Vec::new() }
    }

    /// Address in the rooted tree; entries must be positive.
    pub fn rooted(path: &[u64]) -> Result<Self, AddressError> {
        canonicalize(TreeShape::ROOTED, 0, path.iter().map(|&p| p as i64).collect())
    }

    /// Rootless address; canonicalized.
    pub fn rootless(ancestor: u64, path: &[u64]) -> Result<Self, AddressError> {
        canonicalize(TreeShape::ROOTLESS, ancestor, path.iter().map(|&p| p as i64).collect())
    }

    pub fn ancestor_index(&self) -> u64 {
        self.ancestor
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    pub fn is_anchor(&self) -> bool {
        self.ancestor == 0 && self.path.is_empty()
    }

    /// `(j, [])` with `j >= 1`: a strict ancestor of the anchor.
    pub fn is_chain_ancestor(&self) -> bool {
        self.ancestor > 0 && self.path.is_empty()
    }

    fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self { ancestor: self.ancestor, path }
    }
}

impl fmt::Display for VertexAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.ancestor)?;
        for (i, p) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl FromStr for VertexAddress {
    type Err = AddressError;

    /// Parses `j:p1.p2...` and canonicalizes it as a rootless address
    /// (rooted addresses are the `j = 0` zero-free subset).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (anc, rest) = s.split_once(':').ok_or_else(|| AddressError::Malformed(s.to_string()))?;
        let ancestor: u64 = anc.trim().parse().map_err(|_| AddressError::Malformed(s.to_string()))?;
        let path = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split('.')
                .map(|p| p.trim().parse::<i64>().map_err(|_| AddressError::Malformed(s.to_string())))
                .collect::<Result<Vec<_>, _>>()?
        };
        canonicalize(TreeShape::ROOTLESS, ancestor, path)
    }
}

impl Serialize for VertexAddress {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for VertexAddress {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Reduces `(ancestor, path)` to canonical form.
///
/// A leading 0 below ancestor `j >= 1` names `(j - 1, [])`, so `(j, [0, rest..])`
/// collapses to `(j - 1, rest..)`.
pub fn canonicalize(shape: TreeShape, ancestor: u64, raw: Vec<i64>) -> Result<VertexAddress, AddressError> {
    let label = format!("({ancestor}, {raw:?})");
    let describe = || label.clone();
    if raw.iter().any(|&p| p < 0) {
        return Err(AddressError::Malformed(format!("{}: negative entry", describe())));
    }
    if shape.rooted {
        if ancestor != 0 {
            return Err(AddressError::Malformed(format!("{}: rooted tree has no ancestors", describe())));
        }
        if raw.contains(&0) {
            return Err(AddressError::Malformed(format!("{}: rooted paths use indices >= 1", describe())));
        }
        return Ok(VertexAddress { ancestor: 0, path: raw.into_iter().map(|p| p as u64).collect() });
    }
    if raw.iter().skip(1).any(|&p| p == 0) {
        return Err(AddressError::Malformed(format!("{}: 0 only allowed in first position", describe())));
    }
    let mut ancestor = ancestor;
    let mut path: Vec<u64> = raw.into_iter().map(|p| p as u64).collect();
    if path.first() == Some(&0) {
        if ancestor == 0 {
            return Err(AddressError::Malformed(format!("{}: the anchor has no child 0", describe())));
        }
        ancestor -= 1;
        path.remove(0);
    }
    Ok(VertexAddress { ancestor, path })
}

/// `None` is the root marker of the rooted tree.
pub fn parent(shape: TreeShape, v: &VertexAddress) -> Option<VertexAddress> {
    if v.path.is_empty() {
        if shape.rooted {
            None
        } else {
            Some(VertexAddress { ancestor: v.ancestor + 1, path: Vec::new() })
        }
    } else {
        let mut path = v.path.clone();
        path.pop();
        Some(VertexAddress { ancestor: v.ancestor, path })
    }
}

/// First `count` children in canonical order. Panics if `count == 0`.
pub fn children(shape: TreeShape, v: &VertexAddress, count: usize) -> Vec<VertexAddress> {
    assert!(count >= 1, "children: count must be positive");
    if !shape.rooted && v.is_chain_ancestor() {
        let mut out = Vec::with_capacity(count);
        out.push(VertexAddress { ancestor: v.ancestor - 1, path: Vec::new() });
        out.extend((1..count as u64).map(|i| v.child(i)));
        out
    } else {
        (1..=count as u64).map(|i| v.child(i)).collect()
    }
}

/// Length of the address path (the `k` of `ℕ^k` inside a rooted subtree).
pub fn generation_degree(v: &VertexAddress) -> usize {
    v.path.len()
}

/// Breadth-first listing of `Des(v)` truncated to `depth` generations and the
/// first `breadth` children of every vertex.
pub fn descendants_to_depth(shape: TreeShape, v: &VertexAddress, depth: usize, breadth: usize) -> Vec<VertexAddress> {
    let mut out = vec![v.clone()];
    let mut frontier = vec![v.clone()];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * breadth);
        for u in &frontier {
            next.extend(children(shape, u, breadth));
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// The vertex set used for desk-scale checks: descendants of the root, or of
/// the `depth`-th ancestor of the anchor in the rootless tree.
pub fn truncation(shape: TreeShape, depth: usize, breadth: usize) -> Vec<VertexAddress> {
    let top = if shape.rooted {
        VertexAddress::anchor()
    } else {
        VertexAddress { ancestor: depth as u64, path: Vec::new() }
    };
    descendants_to_depth(shape, &top, depth, breadth)
}
