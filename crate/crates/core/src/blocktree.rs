// SPDX-License-Identifier: Apache-2.0

//! Blocks, attestations, latest-message tables and the LMD GHOST head.
//!
//! Block ids are a global creation counter, so a parent always has a
//! smaller id than any of its children. Views and tables exploit this to
//! store state in dense vectors and to accumulate subtree weights with a
//! single reverse sweep over ids.

use std::fmt::Write as _;

use thiserror::Error;

use crate::topology::NodeId;

pub type BlockId = u32;
pub type ValidatorId = NodeId;
pub type Slot = u64;

pub const GENESIS: BlockId = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockTreeError {
    #[error("block {block} references unknown parent {parent}")]
    UnknownParent { block: BlockId, parent: BlockId },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block {block} at slot {slot} does not follow parent slot {parent_slot}")]
    SlotNotIncreasing {
        block: BlockId,
        slot: Slot,
        parent_slot: Slot,
    },
    #[error("block {block} conflicts with an already stored block of the same id")]
    Conflict { block: BlockId },
    #[error("genesis must be block {GENESIS} at slot 0 without a proposer")]
    BadGenesis,
    #[error("parent id {parent} is not smaller than block id {block}")]
    ParentAfterChild { block: BlockId, parent: BlockId },
    #[error("blocktree dump parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub slot: Slot,
    pub proposer: Option<ValidatorId>,
}

impl Block {
    pub const fn genesis() -> Self {
        Self {
            id: GENESIS,
            parent: None,
            slot: 0,
            proposer: None,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.parent.is_none()
    }
}

/// A validator's vote for the block it considers the head in `slot`.
/// `seq` is the global issuance counter and doubles as its identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attestation {
    pub validator: ValidatorId,
    pub block: BlockId,
    pub slot: Slot,
    pub seq: u64,
}

/// Latest message per validator.
///
/// A new vote replaces the stored one only if it comes from a strictly
/// later slot, so among equal-slot votes the first to arrive is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatestMessageTable {
    entries: Vec<Option<Attestation>>,
    len: usize,
}

impl LatestMessageTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_validators(n: usize) -> Self {
        Self {
            entries: vec![None; n],
            len: 0,
        }
    }

    /// Returns whether the table changed.
    pub fn update(&mut self, a: Attestation) -> bool {
        let idx = a.validator as usize;
        if idx >= self.entries.len() {
            self.entries.resize(idx + 1, None);
        }
        match &mut self.entries[idx] {
            Some(existing) if a.slot <= existing.slot => false,
            Some(existing) => {
                *existing = a;
                true
            }
            slot @ None => {
                *slot = Some(a);
                self.len += 1;
                true
            }
        }
    }

    pub fn get(&self, validator: ValidatorId) -> Option<&Attestation> {
        self.entries.get(validator as usize).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Attestation> {
        self.entries.iter().flatten()
    }
}

/// Free-function form of [`LatestMessageTable::update`].
pub fn update_latest_message(table: &mut LatestMessageTable, a: Attestation) -> bool {
    table.update(a)
}

/// The part of the blocktree one observer knows about. Always parent-closed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockTreeView {
    blocks: Vec<Option<Block>>,
    children: Vec<Vec<BlockId>>,
    len: usize,
}

impl BlockTreeView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_genesis() -> Self {
        let mut view = Self::new();
        view.insert(Block::genesis())
            .expect("genesis inserts into an empty view");
        view
    }

    /// Idempotent insert. The parent must already be known.
    pub fn insert(&mut self, b: Block) -> Result<bool, BlockTreeError> {
        if let Some(existing) = self.get(b.id) {
            return if *existing == b {
                Ok(false)
            } else {
                Err(BlockTreeError::Conflict { block: b.id })
            };
        }
        match b.parent {
            None => {
                if b.id != GENESIS || b.slot != 0 || b.proposer.is_some() {
                    return Err(BlockTreeError::BadGenesis);
                }
            }
            Some(parent) => {
                if parent >= b.id {
                    return Err(BlockTreeError::ParentAfterChild {
                        block: b.id,
                        parent,
                    });
                }
                let parent_slot = self
                    .get(parent)
                    .ok_or(BlockTreeError::UnknownParent {
                        block: b.id,
                        parent,
                    })?
                    .slot;
                if b.slot <= parent_slot {
                    return Err(BlockTreeError::SlotNotIncreasing {
                        block: b.id,
                        slot: b.slot,
                        parent_slot,
                    });
                }
            }
        }

        let idx = b.id as usize;
        if idx >= self.blocks.len() {
            self.blocks.resize(idx + 1, None);
            self.children.resize(idx + 1, Vec::new());
        }
        self.blocks[idx] = Some(b);
        if let Some(parent) = b.parent {
            let siblings = &mut self.children[parent as usize];
            let pos = siblings.partition_point(|&c| c < b.id);
            siblings.insert(pos, b.id);
        }
        self.len += 1;
        Ok(true)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.get(id).is_some()
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(id as usize).and_then(Option::as_ref)
    }

    /// Children of `id`, ascending by id.
    pub fn children(&self, id: BlockId) -> &[BlockId] {
        self.children.get(id as usize).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Known blocks in ascending id order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().flatten()
    }

    /// Whether `ancestor` lies on the path from genesis to `block`
    /// (inclusive on both ends).
    pub fn is_ancestor(&self, ancestor: BlockId, block: BlockId) -> bool {
        let mut cur = Some(block);
        while let Some(id) = cur {
            if id == ancestor {
                return true;
            }
            if id < ancestor {
                return false;
            }
            cur = self.get(id).and_then(|b| b.parent);
        }
        false
    }

    /// Per-block subtree weight, indexed by block id. Votes for blocks
    /// outside the view count for nothing.
    pub fn subtree_weights(&self, table: &LatestMessageTable) -> Vec<u64> {
        let mut weights = vec![0u64; self.blocks.len()];
        for a in table.iter() {
            if self.contains(a.block) {
                weights[a.block as usize] += 1;
            }
        }
        for idx in (0..self.blocks.len()).rev() {
            if let Some(Some(Block {
                parent: Some(p), ..
            })) = self.blocks.get(idx)
            {
                weights[*p as usize] += weights[idx];
            }
        }
        weights
    }

    /// Serializes as `id parent slot proposer` lines, `-` for absent fields.
    pub fn dump(&self) -> String {
        dump_blocks(self.blocks())
    }
}

/// Number of validators whose latest vote is for `b` or a descendant of `b`.
pub fn subtree_weight(
    view: &BlockTreeView,
    table: &LatestMessageTable,
    b: BlockId,
) -> Result<u64, BlockTreeError> {
    if !view.contains(b) {
        return Err(BlockTreeError::UnknownBlock(b));
    }
    Ok(table
        .iter()
        .filter(|a| view.contains(a.block) && view.is_ancestor(b, a.block))
        .count() as u64)
}

/// LMD GHOST: from `root`, repeatedly step to the heaviest child (ties to
/// the smallest id) until reaching a leaf.
pub fn lmd_ghost_head(
    view: &BlockTreeView,
    table: &LatestMessageTable,
    root: BlockId,
) -> Result<BlockId, BlockTreeError> {
    if !view.contains(root) {
        return Err(BlockTreeError::UnknownBlock(root));
    }
    if view.children(root).is_empty() {
        return Ok(root);
    }
    let weights = view.subtree_weights(table);
    Ok(ghost_walk(view, &weights, root))
}

/// The descent step of LMD GHOST over precomputed weights.
pub fn ghost_walk(view: &BlockTreeView, weights: &[u64], root: BlockId) -> BlockId {
    let mut head = root;
    loop {
        let mut best: Option<(u64, BlockId)> = None;
        // Children are ascending, so a strict comparison keeps the smallest
        // id among equally heavy children.
        for &c in view.children(head) {
            let w = weights[c as usize];
            if best.map_or(true, |(bw, _)| w > bw) {
                best = Some((w, c));
            }
        }
        match best {
            Some((_, c)) => head = c,
            None => return head,
        }
    }
}

/// Genesis-to-`head` path, parent first.
pub fn canonical_chain(view: &BlockTreeView, head: BlockId) -> Result<Vec<BlockId>, BlockTreeError> {
    let mut chain = Vec::new();
    let mut cur = Some(head);
    while let Some(id) = cur {
        let block = view.get(id).ok_or(BlockTreeError::UnknownBlock(id))?;
        chain.push(id);
        cur = block.parent;
    }
    chain.reverse();
    Ok(chain)
}

pub fn dump_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> String {
    let mut out = String::new();
    for b in blocks {
        let parent = b.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
        let proposer = b.proposer.map_or_else(|| "-".to_string(), |p| p.to_string());
        let _ = writeln!(out, "{} {} {} {}", b.id, parent, b.slot, proposer);
    }
    out
}

/// Parses the output of [`dump_blocks`] back into a view.
pub fn parse_dump(text: &str) -> Result<BlockTreeView, BlockTreeError> {
    fn field<T: std::str::FromStr>(s: &str, line: usize) -> Result<Option<T>, BlockTreeError> {
        if s == "-" {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| BlockTreeError::Parse {
            line,
            msg: format!("bad field {s:?}"),
        })
    }
    let mut view = BlockTreeView::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        let [id, parent, slot, proposer] = parts[..] else {
            return Err(BlockTreeError::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", parts.len()),
            });
        };
        let missing = || BlockTreeError::Parse {
            line: line_no,
            msg: "id and slot are required".into(),
        };
        let block = Block {
            id: field(id, line_no)?.ok_or_else(missing)?,
            parent: field(parent, line_no)?,
            slot: field(slot, line_no)?.ok_or_else(missing)?,
            proposer: field(proposer, line_no)?,
        };
        view.insert(block)?;
    }
    Ok(view)
}
