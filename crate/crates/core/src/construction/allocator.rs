//! Pairing bijections and the global atom allocator.
//!
//! Every measure built anywhere in a model draws its atoms from its own
//! allocation key. A key `k` with index `ξ(k)` owns the supports
//! `θ + (i - 1) + ξ/(ξ + 1)`, `i >= 1`. For integral `θ` the fractional part
//! identifies the key, so supports of distinct keys never collide and a
//! support can be decoded back to its owner.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Cantor pairing `ℤ+ × ℤ+ → ℤ+`. Panics on `u128` overflow.
pub fn cantor_pair(a: u128, b: u128) -> u128 {
    checked_cantor_pair(a, b).expect("cantor_pair overflow")
}

/// [`cantor_pair`], or `None` past `u128`.
pub fn checked_cantor_pair(a: u128, b: u128) -> Option<u128> {
    let s = a.checked_add(b)?;
    s.checked_mul(s + 1).map(|x| x / 2)?.checked_add(b)
}

/// Inverse of [`cantor_pair`].
pub fn cantor_unpair(z: u128) -> (u128, u128) {
    // largest s with s(s+1)/2 <= z
    let mut s = (((8.0 * z as f64 + 1.0).sqrt() - 1.0) / 2.0) as u128;
    while s * (s + 1) / 2 > z {
        s -= 1;
    }
    while (s + 1) * (s + 2) / 2 <= z {
        s += 1;
    }
    let b = z - s * (s + 1) / 2;
    (s - b, b)
}

/// Iterated pairing `ℕ^k → ℤ+`: `ξ_1(j) = j - 1`, `ξ_{k+1}(x, j) = ⟨ξ_k(x), j - 1⟩`.
/// The empty word maps to 0. Entries must be positive.
pub fn level_index(path: &[u64]) -> u128 {
    let mut iter = path.iter();
    let Some(&first) = iter.next() else { return 0 };
    assert!(first >= 1, "index-tree entries are positive");
    let mut acc = (first - 1) as u128;
    for &j in iter {
        assert!(j >= 1, "index-tree entries are positive");
        acc = cantor_pair(acc, (j - 1) as u128);
    }
    acc
}

/// Index of a child given the parent's [`level_index`] (`None` for the empty word).
pub fn child_level_index(parent: Option<u128>, child: u64) -> u128 {
    match parent {
        None => (child - 1) as u128,
        Some(p) => cantor_pair(p, (child - 1) as u128),
    }
}

/// Inverse of [`level_index`] on `ℕ^k`.
pub fn level_path(k: usize, mut index: u128) -> Vec<u64> {
    let mut rev = Vec::with_capacity(k);
    for level in (0..k).rev() {
        if level == 0 {
            rev.push(index as u64 + 1);
        } else {
            let (prefix, last) = cantor_unpair(index);
            rev.push(last as u64 + 1);
            index = prefix;
        }
    }
    rev.reverse();
    rev
}

/// Bijection `X = ⊔ ℕ^k → ℤ+`: empty word ↦ 0, `x ∈ ℕ^k` ↦ `1 + ⟨k - 1, ξ_k(x)⟩`.
pub fn word_code(path: &[u64]) -> u128 {
    if path.is_empty() {
        0
    } else {
        1 + cantor_pair((path.len() - 1) as u128, level_index(path))
    }
}

pub fn word_from_code(code: u128) -> Vec<u64> {
    if code == 0 {
        return Vec::new();
    }
    let (k1, idx) = cantor_unpair(code - 1);
    level_path(k1 as usize + 1, idx)
}

/// One rooted construction: the anchor/root subtree `(0, 0)` or the subtree
/// hanging from sibling `i >= 1` of the chain vertex `(j, [])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubtreeId {
    pub chain: u64,
    pub sibling: u64,
}

impl SubtreeId {
    pub const ANCHOR: SubtreeId = SubtreeId { chain: 0, sibling: 0 };

    pub fn index(&self) -> u128 {
        if self.chain == 0 {
            0
        } else {
            1 + cantor_pair((self.chain - 1) as u128, (self.sibling - 1) as u128)
        }
    }

    pub fn from_index(index: u128) -> Self {
        if index == 0 {
            Self::ANCHOR
        } else {
            let (j, i) = cantor_unpair(index - 1);
            Self { chain: j as u64 + 1, sibling: i as u64 + 1 }
        }
    }

    /// Support floor used for this subtree: 1 for the anchor, `(i + 1)^2` for siblings.
    pub fn theta(&self) -> u64 {
        if self.chain == 0 {
            1
        } else {
            (self.sibling + 1) * (self.sibling + 1)
        }
    }
}

impl fmt::Display for SubtreeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.chain, self.sibling)
    }
}

/// `(subtree, x ∈ X)`: identifies the measure `ν_x` of one rooted construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AllocationKey {
    pub subtree: SubtreeId,
    pub word: Vec<u64>,
}

impl AllocationKey {
    pub fn new(subtree: SubtreeId, word: Vec<u64>) -> Self {
        Self { subtree, word }
    }

    pub fn index(&self) -> u128 {
        cantor_pair(self.subtree.index(), word_code(&self.word))
    }

    pub fn from_index(index: u128) -> Self {
        let (s, w) = cantor_unpair(index);
        Self { subtree: SubtreeId::from_index(s), word: word_from_code(w) }
    }
}

impl fmt::Display for AllocationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#", self.subtree)?;
        for (i, p) in self.word.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// `ξ/(ξ + 1)`.
pub fn offset(index: u128) -> BigRational {
    BigRational::new(BigInt::from(index), BigInt::from(index) + 1)
}

/// `θ + (i - 1) + ξ/(ξ + 1)`, `i >= 1`.
pub fn support(theta: u64, index: u128, i: u64) -> BigRational {
    assert!(i >= 1);
    BigRational::from_integer(BigInt::from(theta + i - 1)) + offset(index)
}

/// Recovers `(ξ, integer part)` from a support, or `None` if its fractional
/// part is not of the form `ξ/(ξ + 1)`.
pub fn decode_fraction(t: &BigRational) -> Option<(u128, u64)> {
    let floor = t.numer().div_floor(t.denom());
    let frac = t - BigRational::from_integer(floor.clone());
    let floor = floor.to_u64()?;
    if frac.is_zero() {
        return Some((0, floor));
    }
    // frac = ξ/(ξ+1)  ⇔  ξ = frac/(1 - frac)
    let xi = &frac / (BigRational::one() - &frac);
    if !xi.is_integer() {
        return None;
    }
    Some((xi.to_integer().to_u128()?, floor))
}

/// Decodes a support into `(key index ξ, atom index i)` given a support floor
/// lookup for the owning key.
pub fn decode_support(t: &BigRational, theta_of: impl Fn(u128) -> Option<u64>) -> Option<(u128, u64)> {
    let (xi, floor) = decode_fraction(t)?;
    let theta = theta_of(xi)?;
    if floor < theta {
        return None;
    }
    Some((xi, floor - theta + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pairing_round_trip_small() {
        for z in 0..500u128 {
            let (a, b) = cantor_unpair(z);
            assert_eq!(cantor_pair(a, b), z);
        }
    }

    #[test]
    fn level_index_examples() {
        assert_eq!(level_index(&[1]), 0);
        assert_eq!(level_index(&[3]), 2);
        assert_eq!(level_index(&[1, 1]), 0);
        assert_eq!(level_index(&[1, 1, 1, 1]), 0);
        assert_eq!(level_index(&[2, 1]), cantor_pair(1, 0));
    }

    #[test]
    fn level_index_is_bijective_on_prefix() {
        for k in 1..4 {
            let mut seen = std::collections::BTreeSet::new();
            for idx in 0..200u128 {
                let p = level_path(k, idx);
                assert_eq!(p.len(), k);
                assert_eq!(level_index(&p), idx);
                assert!(seen.insert(p));
            }
        }
    }

    #[test]
    fn word_codes_round_trip() {
        for code in 0..300u128 {
            assert_eq!(word_code(&word_from_code(code)), code);
        }
    }

    #[test]
    fn subtree_theta() {
        assert_eq!(SubtreeId::ANCHOR.theta(), 1);
        assert_eq!(SubtreeId { chain: 1, sibling: 1 }.theta(), 4);
        assert_eq!(SubtreeId { chain: 3, sibling: 2 }.theta(), 9);
    }

    #[test]
    fn supports_decode() {
        let key = AllocationKey::new(SubtreeId { chain: 1, sibling: 2 }, vec![3, 1]);
        let xi = key.index();
        let theta = key.subtree.theta();
        for i in 1..20 {
            let t = support(theta, xi, i);
            let (k, j) = decode_support(&t, |x| Some(AllocationKey::from_index(x).subtree.theta())).unwrap();
            assert_eq!(k, xi);
            assert_eq!(j, i);
        }
        assert_eq!(AllocationKey::from_index(xi), key);
    }

    proptest! {
        #[test]
        fn distinct_keys_have_disjoint_supports(a in 0u128..2000, b in 0u128..2000, ta in 1u64..50, tb in 1u64..50,
                                                i in 1u64..100, j in 1u64..100) {
            prop_assume!(a != b);
            prop_assert_ne!(support(ta, a, i), support(tb, b, j));
        }

        #[test]
        fn supports_increase_and_respect_floor(xi in 0u128..10_000, theta in 1u64..100, i in 1u64..1000) {
            let s = support(theta, xi, i);
            prop_assert!(s >= BigRational::from_integer(theta.into()));
            prop_assert!(support(theta, xi, i + 1) > s);
        }

        #[test]
        fn pairing_round_trip(a in 0u128..1_000_000, b in 0u128..1_000_000) {
            prop_assert_eq!(cantor_unpair(cantor_pair(a, b)), (a, b));
        }
    }
}
