//! Binary Merkle trees over key/value leaves.
//!
//! Construction:
//! - entry digest `E = H(k, v)` (length-prefixed parts);
//! - leaf node `H(0x00 || E)`, interior node `H(0x01 || left || right)`;
//! - levels are paired left to right, an unpaired last node is promoted as is;
//! - the empty tree has the all-zero root.
//!
//! Proofs record the leaf index and one step per level, so a verifier can
//! check both the fold and the leaf position. Sorted trees additionally
//! support non-membership proofs built from the two neighbouring leaves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec;
use crate::crypto::{hash_parts, Digest};

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("key {0} not in tree")]
    AbsentKey(String),
    #[error("key {0} is present")]
    PresentKey(String),
    #[error("non-membership proofs need a sorted tree")]
    Unsorted,
}

fn show(key: &[u8]) -> String {
    match std::str::from_utf8(key) {
        Ok(s) if s.chars().all(|c| !c.is_control()) => s.to_string(),
        _ => hex::encode(key),
    }
}

pub fn entry_digest(key: &[u8], value: &[u8]) -> Digest {
    hash_parts(&[key, value])
}

pub fn leaf_hash(entry: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(entry.0);
    Digest(h.finalize().into())
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// One level of a membership path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathStep {
    /// Sibling sits to the left of the running node.
    Left(Digest),
    /// Sibling sits to the right of the running node.
    Right(Digest),
    /// Running node was the unpaired last node at this level.
    Promoted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipProof {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub index: u64,
    pub path: Vec<PathStep>,
    pub root: Digest,
}

impl MembershipProof {
    /// Root obtained by folding the path, or `None` if the steps disagree
    /// with the index bits.
    pub fn fold(&self) -> Option<Digest> {
        if self.path.len() < 64 && self.index >> self.path.len() != 0 {
            return None;
        }
        let mut acc = leaf_hash(&entry_digest(&self.key, &self.value));
        for (level, step) in self.path.iter().enumerate() {
            let bit = (self.index >> level) & 1;
            acc = match (bit, step) {
                (1, PathStep::Left(s)) => node_hash(s, &acc),
                (0, PathStep::Right(s)) => node_hash(&acc, s),
                (0, PathStep::Promoted) => acc,
                _ => return None,
            };
        }
        Some(acc)
    }

    /// True when no level has a right sibling, i.e. this is the last leaf.
    pub fn is_rightmost(&self) -> bool {
        !self.path.iter().any(|s| matches!(s, PathStep::Right(_)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, codec::DecodeError> {
        codec::decode(bytes)
    }
}

/// Proof that a key is absent from a sorted tree. A `None` neighbour is the
/// boundary sentinel below the first or above the last leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonMembershipProof {
    pub key: Vec<u8>,
    pub left: Option<MembershipProof>,
    pub right: Option<MembershipProof>,
    pub root: Digest,
}

impl NonMembershipProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, codec::DecodeError> {
        codec::decode(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    leaves: Vec<(Vec<u8>, Vec<u8>)>,
    positions: BTreeMap<Vec<u8>, usize>,
    /// `levels[0]` are leaf nodes, the last level holds the root.
    levels: Vec<Vec<Digest>>,
    sorted: bool,
}

impl MerkleTree {
    pub fn build(leaves: Vec<(Vec<u8>, Vec<u8>)>, sorted: bool) -> Result<Self, MerkleError> {
        let mut leaves = leaves;
        if sorted {
            leaves.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let mut positions = BTreeMap::new();
        for (i, (k, _)) in leaves.iter().enumerate() {
            if positions.insert(k.clone(), i).is_some() {
                return Err(MerkleError::DuplicateKey(show(k)));
            }
        }
        let mut levels = Vec::new();
        if !leaves.is_empty() {
            let mut level: Vec<Digest> = leaves.iter().map(|(k, v)| leaf_hash(&entry_digest(k, v))).collect();
            while level.len() > 1 {
                let next = level
                    .chunks(2)
                    .map(|pair| match pair {
                        [l, r] => node_hash(l, r),
                        [only] => *only,
                        _ => unreachable!(),
                    })
                    .collect();
                levels.push(level);
                level = next;
            }
            levels.push(level);
        }
        Ok(MerkleTree { leaves, positions, levels, sorted })
    }

    /// Sorted tree from a map; keys are unique by construction.
    pub fn from_map(map: &BTreeMap<Vec<u8>, Vec<u8>>) -> Self {
        let leaves = map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        Self::build(leaves, true).expect("map keys are unique")
    }

    pub fn root(&self) -> Digest {
        self.levels.last().map(|l| l[0]).unwrap_or(Digest::ZERO)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn leaves(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.leaves
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.positions.get(key).map(|&i| self.leaves[i].1.as_slice())
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.positions.contains_key(key)
    }

    fn proof_at(&self, index: usize) -> MembershipProof {
        let mut path = Vec::with_capacity(self.levels.len().saturating_sub(1));
        let mut pos = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let step = if pos % 2 == 1 {
                PathStep::Left(level[pos - 1])
            } else if pos + 1 < level.len() {
                PathStep::Right(level[pos + 1])
            } else {
                PathStep::Promoted
            };
            path.push(step);
            pos /= 2;
        }
        let (key, value) = self.leaves[index].clone();
        MembershipProof { key, value, index: index as u64, path, root: self.root() }
    }

    pub fn prove_membership(&self, key: &[u8]) -> Result<MembershipProof, MerkleError> {
        let index = *self.positions.get(key).ok_or_else(|| MerkleError::AbsentKey(show(key)))?;
        Ok(self.proof_at(index))
    }

    pub fn prove_non_membership(&self, key: &[u8]) -> Result<NonMembershipProof, MerkleError> {
        if !self.sorted {
            return Err(MerkleError::Unsorted);
        }
        if self.contains(key) {
            return Err(MerkleError::PresentKey(show(key)));
        }
        let upper = self.leaves.partition_point(|(k, _)| k.as_slice() < key);
        let left = upper.checked_sub(1).map(|i| self.proof_at(i));
        let right = (upper < self.leaves.len()).then(|| self.proof_at(upper));
        Ok(NonMembershipProof { key: key.to_vec(), left, right, root: self.root() })
    }
}

pub fn verify_membership(root: &Digest, proof: &MembershipProof) -> bool {
    proof.root == *root && proof.fold() == Some(*root)
}

/// Checks that `key` is absent under `root`. The proof's own key must be
/// the one asked about; otherwise it proves a different statement.
pub fn verify_non_membership(root: &Digest, key: &[u8], proof: &NonMembershipProof) -> bool {
    if proof.root != *root || proof.key != key {
        return false;
    }
    match (&proof.left, &proof.right) {
        (None, None) => *root == Digest::ZERO,
        (Some(l), None) => verify_membership(root, l) && l.key < proof.key && l.is_rightmost(),
        (None, Some(r)) => verify_membership(root, r) && proof.key < r.key && r.index == 0,
        (Some(l), Some(r)) => {
            verify_membership(root, l)
                && verify_membership(root, r)
                && l.key < proof.key
                && proof.key < r.key
                && l.index.checked_add(1) == Some(r.index)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kv(i: usize) -> (Vec<u8>, Vec<u8>) {
        (format!("key-{i:04}").into_bytes(), format!("value-{i}").into_bytes())
    }

    fn random_leaves(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut map = BTreeMap::new();
        while map.len() < n {
            let klen = rng.gen_range(1..12);
            let k: Vec<u8> = (0..klen).map(|_| rng.gen()).collect();
            let vlen = rng.gen_range(0..20);
            let v: Vec<u8> = (0..vlen).map(|_| rng.gen()).collect();
            map.insert(k, v);
        }
        let mut leaves: Vec<_> = map.into_iter().collect();
        // Shuffle so unsorted trees see arbitrary order.
        for i in (1..leaves.len()).rev() {
            let j = rng.gen_range(0..=i);
            leaves.swap(i, j);
        }
        leaves
    }

    /// Independent root: split at the largest power of two below n.
    fn oracle_root(leaves: &[(Vec<u8>, Vec<u8>)]) -> Digest {
        fn go(nodes: &[Digest]) -> Digest {
            if nodes.len() == 1 {
                return nodes[0];
            }
            let mut split = 1;
            while split * 2 < nodes.len() {
                split *= 2;
            }
            let l = go(&nodes[..split]);
            let r = go(&nodes[split..]);
            let mut bytes = vec![0x01];
            bytes.extend_from_slice(&l.0);
            bytes.extend_from_slice(&r.0);
            sha256(&bytes)
        }
        if leaves.is_empty() {
            return Digest::ZERO;
        }
        let nodes: Vec<Digest> = leaves
            .iter()
            .map(|(k, v)| {
                let mut e = Vec::new();
                e.extend_from_slice(&(k.len() as u64).to_le_bytes());
                e.extend_from_slice(k);
                e.extend_from_slice(&(v.len() as u64).to_le_bytes());
                e.extend_from_slice(v);
                let mut leaf = vec![0x00];
                leaf.extend_from_slice(&sha256(&e).0);
                sha256(&leaf)
            })
            .collect();
        go(&nodes)
    }

    #[test]
    fn empty_tree_has_zero_root() {
        let t = MerkleTree::build(vec![], false).unwrap();
        assert_eq!(t.root(), Digest::ZERO);
    }

    #[test]
    fn single_leaf_root_is_wrapped_entry_digest() {
        let t = MerkleTree::build(vec![(b"k".to_vec(), b"v".to_vec())], false).unwrap();
        assert_eq!(t.root(), leaf_hash(&entry_digest(b"k", b"v")));
        let p = t.prove_membership(b"k").unwrap();
        assert!(p.path.is_empty());
        assert!(verify_membership(&t.root(), &p));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = MerkleTree::build(vec![kv(1), kv(1)], false).unwrap_err();
        assert!(matches!(err, MerkleError::DuplicateKey(_)));
    }

    #[test]
    fn root_matches_split_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 3, 5, 7, 8, 9, 33, 100] {
            let leaves = random_leaves(&mut rng, n);
            let t = MerkleTree::build(leaves.clone(), false).unwrap();
            assert_eq!(t.root(), oracle_root(&leaves), "n={n}");
        }
    }

    #[test]
    fn sorted_flag_reorders() {
        let t = MerkleTree::build(vec![kv(3), kv(1), kv(2)], true).unwrap();
        let keys: Vec<_> = t.leaves().iter().map(|(k, _)| k.clone()).collect();
        assert_eq!(keys, vec![kv(1).0, kv(2).0, kv(3).0]);
    }

    #[test]
    fn eight_leaves_give_depth_three() {
        let t = MerkleTree::build((0..8).map(kv).collect(), false).unwrap();
        for i in 0..8 {
            let p = t.prove_membership(&kv(i).0).unwrap();
            assert_eq!(p.path.len(), 3);
            assert!(verify_membership(&t.root(), &p));
        }
    }

    #[test]
    fn fifty_leaves_all_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let t = MerkleTree::build(random_leaves(&mut rng, 50), false).unwrap();
        for (k, _) in t.leaves() {
            assert!(verify_membership(&t.root(), &t.prove_membership(k).unwrap()));
        }
    }

    #[test]
    fn absent_key_has_no_membership_proof() {
        let t = MerkleTree::build((0..4).map(kv).collect(), true).unwrap();
        assert!(matches!(t.prove_membership(b"nope"), Err(MerkleError::AbsentKey(_))));
    }

    #[test]
    fn flipped_sibling_rejected() {
        let t = MerkleTree::build((0..8).map(kv).collect(), false).unwrap();
        let mut p = t.prove_membership(&kv(5).0).unwrap();
        if let PathStep::Left(d) | PathStep::Right(d) = &mut p.path[1] {
            d.0[0] ^= 1;
        }
        assert!(!verify_membership(&t.root(), &p));
    }

    #[test]
    fn cross_tree_roots_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = MerkleTree::build(random_leaves(&mut rng, 10), false).unwrap();
            let b = MerkleTree::build(random_leaves(&mut rng, 10), false).unwrap();
            let p = a.prove_membership(&a.leaves()[3].0).unwrap();
            assert!(!verify_membership(&b.root(), &p));
            let mut q = p.clone();
            q.root = b.root();
            assert!(!verify_membership(&b.root(), &q));
        }
    }

    #[test]
    fn non_membership_below_all_leaves() {
        let t = MerkleTree::build((1..6).map(kv).collect(), true).unwrap();
        let p = t.prove_non_membership(b"a").unwrap();
        assert!(p.left.is_none());
        assert_eq!(p.right.as_ref().unwrap().key, kv(1).0);
        assert!(verify_non_membership(&t.root(), b"a", &p));
    }

    #[test]
    fn non_membership_above_all_leaves() {
        let t = MerkleTree::build((1..6).map(kv).collect(), true).unwrap();
        let p = t.prove_non_membership(b"zzz").unwrap();
        assert!(p.right.is_none());
        assert!(verify_non_membership(&t.root(), b"zzz", &p));
    }

    #[test]
    fn non_membership_in_empty_tree() {
        let t = MerkleTree::build(vec![], true).unwrap();
        let p = t.prove_non_membership(b"k").unwrap();
        assert!(verify_non_membership(&Digest::ZERO, b"k", &p));
    }

    #[test]
    fn non_membership_every_gap_of_random_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let t = MerkleTree::build(random_leaves(&mut rng, 20), true).unwrap();
        let keys: Vec<Vec<u8>> = t.leaves().iter().map(|(k, _)| k.clone()).collect();
        for w in keys.windows(2) {
            // Extending the lower key by one byte lands strictly in the gap.
            let mut probe = w[0].clone();
            probe.push(0);
            if probe == w[1] {
                continue;
            }
            let p = t.prove_non_membership(&probe).unwrap();
            assert_eq!(p.left.as_ref().unwrap().key, w[0]);
            assert_eq!(p.right.as_ref().unwrap().key, w[1]);
            assert!(verify_non_membership(&t.root(), &probe, &p));
            let mut other = probe.clone();
            other.push(0);
            assert!(!verify_non_membership(&t.root(), &other, &p));
        }
    }

    #[test]
    fn non_adjacent_neighbours_rejected() {
        let t = MerkleTree::build((0..8).map(|i| kv(i * 2)).collect(), true).unwrap();
        let mut p = t.prove_non_membership(&kv(5).0).unwrap();
        p.right = Some(t.prove_membership(&kv(10).0).unwrap());
        assert!(!verify_non_membership(&t.root(), &kv(5).0, &p));
    }

    #[test]
    fn fake_right_sentinel_rejected() {
        let t = MerkleTree::build((0..8).map(|i| kv(i * 2)).collect(), true).unwrap();
        let mut p = t.prove_non_membership(&kv(5).0).unwrap();
        p.right = None;
        assert!(!verify_non_membership(&t.root(), &kv(5).0, &p));
    }

    #[test]
    fn present_key_has_no_non_membership_proof() {
        let t = MerkleTree::build((0..4).map(kv).collect(), true).unwrap();
        assert!(matches!(t.prove_non_membership(&kv(2).0), Err(MerkleError::PresentKey(_))));
        let u = MerkleTree::build((0..4).map(kv).collect(), false).unwrap();
        assert!(matches!(u.prove_non_membership(b"x"), Err(MerkleError::Unsorted)));
    }

    #[test]
    fn proof_serialization_golden() {
        let t =
            MerkleTree::build(vec![(b"a".to_vec(), b"1".to_vec()), (b"b".to_vec(), b"2".to_vec()), (b"c".to_vec(), b"3".to_vec())], true)
                .unwrap();
        let p = t.prove_membership(b"c").unwrap();
        let bytes = p.to_bytes();
        assert_eq!(MembershipProof::from_bytes(&bytes).unwrap(), p);
        // key len, key, value len, value, index, path len, step tag, then root.
        assert_eq!(&bytes[..8], &1u64.to_le_bytes());
        assert_eq!(bytes[8], b'c');
        assert_eq!(&bytes[18..26], &2u64.to_le_bytes());
        assert_eq!(&bytes[26..34], &2u64.to_le_bytes());
        assert_eq!(&bytes[34..38], &2u32.to_le_bytes());
        if std::env::var_os("BLESS").is_some() {
            std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/membership_proof.hex"), hex::encode(&bytes)).unwrap();
        }
        assert_eq!(hex::encode(&bytes), include_str!("../tests/golden/membership_proof.hex").trim());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prove_verify_round_trip(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = MerkleTree::build(random_leaves(&mut rng, n), seed % 2 == 0).unwrap();
            for (k, _) in t.leaves() {
                let p = t.prove_membership(k).unwrap();
                prop_assert!(verify_membership(&t.root(), &p));
                let back = MembershipProof::from_bytes(&p.to_bytes()).unwrap();
                prop_assert_eq!(back, p);
            }
        }

        #[test]
        fn single_byte_mutation_rejected(seed in any::<u64>(), n in 1usize..30, pick in any::<usize>(), flip in 1u8..=255) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = MerkleTree::build(random_leaves(&mut rng, n), false).unwrap();
            let (k, _) = &t.leaves()[pick % n];
            let mut bytes = t.prove_membership(k).unwrap().to_bytes();
            let at = (pick / n) % bytes.len();
            bytes[at] ^= flip;
            let accepted = MembershipProof::from_bytes(&bytes)
                .map(|p| verify_membership(&t.root(), &p))
                .unwrap_or(false);
            prop_assert!(!accepted);
        }

        #[test]
        fn membership_and_non_membership_exclusive(seed in any::<u64>(), n in 0usize..25, probe in proptest::collection::vec(any::<u8>(), 1..6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = MerkleTree::build(random_leaves(&mut rng, n), true).unwrap();
            let root = t.root();
            let member = t.prove_membership(&probe).map(|p| verify_membership(&root, &p)).unwrap_or(false);
            let absent = t.prove_non_membership(&probe).map(|p| verify_non_membership(&root, &probe, &p)).unwrap_or(false);
            prop_assert!(member != absent);
        }
    }
}
