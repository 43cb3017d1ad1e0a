//! Binary Merkle tree over entry leaf hashes, split at the largest power of two
//! below the leaf count. Leaves and interior nodes use distinct prefixes.

use crate::crypto::{hash, hash_parts, HashDigest};

pub fn empty_root() -> HashDigest {
    hash(b"")
}

pub fn node(left: &HashDigest, right: &HashDigest) -> HashDigest {
    hash_parts(&[&[1u8], left.as_bytes(), right.as_bytes()])
}

fn split(n: usize) -> usize {
    debug_assert!(n > 1);
    let mut k = 1;
    while k * 2 < n {
        k *= 2;
    }
    k
}

pub fn root(leaves: &[HashDigest]) -> HashDigest {
    match leaves.len() {
        0 => empty_root(),
        1 => leaves[0],
        n => {
            let k = split(n);
            node(&root(&leaves[..k]), &root(&leaves[k..]))
        }
    }
}

/// Audit path for `index`, deepest sibling first.
pub fn proof(leaves: &[HashDigest], index: usize) -> Vec<HashDigest> {
    assert!(index < leaves.len(), "index out of range");
    let mut path = Vec::new();
    fn walk(leaves: &[HashDigest], index: usize, path: &mut Vec<HashDigest>) {
        if leaves.len() <= 1 {
            return;
        }
        let k = split(leaves.len());
        if index < k {
            walk(&leaves[..k], index, path);
            path.push(root(&leaves[k..]));
        } else {
            walk(&leaves[k..], index - k, path);
            path.push(root(&leaves[..k]));
        }
    }
    walk(leaves, index, &mut path);
    path
}

/// Recomputes the root from a leaf and its audit path; `None` if the path shape is wrong.
pub fn root_from_proof(leaf: &HashDigest, index: u64, count: u64, path: &[HashDigest]) -> Option<HashDigest> {
    if index >= count {
        return None;
    }
    fn climb(leaf: &HashDigest, index: u64, count: u64, path: &[HashDigest]) -> Option<(HashDigest, usize)> {
        if count == 1 {
            return Some((*leaf, 0));
        }
        let k = split(count as usize) as u64;
        let (sub, used) = if index < k { climb(leaf, index, k, path)? } else { climb(leaf, index - k, count - k, path)? };
        let sibling = path.get(used)?;
        let parent = if index < k { node(&sub, sibling) } else { node(sibling, &sub) };
        Some((parent, used + 1))
    }
    let (r, used) = climb(leaf, index, count, path)?;
    (used == path.len()).then_some(r)
}
