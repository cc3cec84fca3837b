// SPDX-License-Identifier: Apache-2.0

//! Brute-force LMD GHOST used as a reference in tests. Shares nothing with
//! the library's fork choice beyond plain data: parents are looked up in a
//! map, descendant sets are enumerated by walking parent pointers, and the
//! head is chosen by comparing every root-to-leaf path.

use std::cmp::Reverse;
use std::collections::BTreeMap;

/// `parents[id] = parent`, genesis maps to `None`.
pub type Parents = BTreeMap<u32, Option<u32>>;

pub fn is_descendant(parents: &Parents, ancestor: u32, mut block: u32) -> bool {
    loop {
        if block == ancestor {
            return true;
        }
        match parents.get(&block).copied().flatten() {
            Some(p) => block = p,
            None => return false,
        }
    }
}

/// Number of latest votes landing on `block` or below it. Votes for
/// blocks missing from `parents` count for nothing.
pub fn weight(parents: &Parents, votes: &BTreeMap<u32, u32>, block: u32) -> usize {
    votes
        .values()
        .filter(|&&v| parents.contains_key(&v) && is_descendant(parents, block, v))
        .count()
}

fn children(parents: &Parents, block: u32) -> Vec<u32> {
    parents
        .iter()
        .filter(|(_, p)| **p == Some(block))
        .map(|(c, _)| *c)
        .collect()
}

fn paths(parents: &Parents, root: u32) -> Vec<Vec<u32>> {
    let kids = children(parents, root);
    if kids.is_empty() {
        return vec![vec![root]];
    }
    kids.into_iter()
        .flat_map(|k| {
            paths(parents, k).into_iter().map(move |mut p| {
                p.insert(0, root);
                p
            })
        })
        .collect()
}

/// Among all root-to-leaf paths, the one whose per-step (weight, smaller
/// id) sequence is lexicographically largest; returns its leaf.
pub fn head(parents: &Parents, votes: &BTreeMap<u32, u32>, root: u32) -> u32 {
    let best = paths(parents, root)
        .into_iter()
        .max_by_key(|path| {
            path[1..]
                .iter()
                .map(|&b| (weight(parents, votes, b), Reverse(b)))
                .collect::<Vec<_>>()
        })
        .expect("at least one path");
    *best.last().expect("non-empty path")
}

/// Latest-message table semantics: strictly later slot replaces, so the
/// first vote seen for a slot sticks. Input is `(validator, block, slot)`
/// in arrival order.
pub fn latest_votes(arrivals: &[(u32, u32, u64)]) -> BTreeMap<u32, u32> {
    let mut best: BTreeMap<u32, (u64, u32)> = BTreeMap::new();
    for &(v, b, s) in arrivals {
        match best.get(&v) {
            Some(&(slot, _)) if s <= slot => {}
            _ => {
                best.insert(v, (s, b));
            }
        }
    }
    best.into_iter().map(|(v, (_, b))| (v, b)).collect()
}
