// SPDX-License-Identifier: Apache-2.0

//! Consensus quality measured by an omniscient observer that sees every
//! block and every attestation the moment it is issued.

use std::collections::HashMap;

use crate::blocktree::{
    canonical_chain, lmd_ghost_head, Attestation, Block, BlockId, BlockTreeError, BlockTreeView,
    LatestMessageTable, GENESIS,
};
use crate::engine::SimulationTrace;
use crate::topology::{diameter, predicted_diameter, PeerGraph, TopologyError};

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusReport {
    pub mainchain_rate: f64,
    pub branching_ratio: f64,
    pub total_blocks: usize,
    pub mainchain_blocks: usize,
    pub orphaned: usize,
    pub observed_diameter: u32,
    /// `None` when the graph is outside the formula's regime (`n p <= 1`).
    pub predicted_diameter: Option<f64>,
    pub threshold_margin: f64,
    pub predicted_threshold_margin: Option<f64>,
}

/// Mainchain decomposition of a blocktree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mainchain {
    pub head: BlockId,
    /// Genesis-to-head path.
    pub blocks: Vec<BlockId>,
    /// Orphans in ascending id order.
    pub orphans: Vec<BlockId>,
}

fn global_view(blocks: &[Block]) -> Result<BlockTreeView, BlockTreeError> {
    let mut view = BlockTreeView::new();
    let mut sorted: Vec<&Block> = blocks.iter().collect();
    sorted.sort_unstable_by_key(|b| b.id);
    for b in sorted {
        view.insert(*b)?;
    }
    Ok(view)
}

fn global_table(attestations: &[Attestation]) -> LatestMessageTable {
    let mut ordered: Vec<&Attestation> = attestations.iter().collect();
    ordered.sort_unstable_by_key(|a| (a.slot, a.seq));
    let mut table = LatestMessageTable::new();
    for a in ordered {
        table.update(*a);
    }
    table
}

/// Head selected by LMD GHOST over all blocks and all attestations, the
/// latter applied in `(slot, seq)` order.
pub fn omniscient_head(
    blocks: &[Block],
    attestations: &[Attestation],
) -> Result<BlockId, BlockTreeError> {
    let view = global_view(blocks)?;
    lmd_ghost_head(&view, &global_table(attestations), GENESIS)
}

pub fn mainchain(blocks: &[Block], attestations: &[Attestation]) -> Result<Mainchain, BlockTreeError> {
    let view = global_view(blocks)?;
    let head = lmd_ghost_head(&view, &global_table(attestations), GENESIS)?;
    let chain = canonical_chain(&view, head)?;
    let mut on_chain = vec![false; blocks.iter().map(|b| b.id as usize + 1).max().unwrap_or(0)];
    for &id in &chain {
        on_chain[id as usize] = true;
    }
    let mut orphans: Vec<BlockId> = blocks
        .iter()
        .map(|b| b.id)
        .filter(|&id| !on_chain[id as usize])
        .collect();
    orphans.sort_unstable();
    Ok(Mainchain {
        head,
        blocks: chain,
        orphans,
    })
}

/// `|M| / |B|`, genesis counted in both.
pub fn mainchain_rate(blocks: &[Block], chain: &Mainchain) -> f64 {
    chain.blocks.len() as f64 / blocks.len() as f64
}

/// Mean number of orphans sharing a parent with a mainchain block. Genesis
/// has no parent and contributes nothing to the sum, but counts in `|M|`.
pub fn branching_ratio(blocks: &[Block], chain: &Mainchain) -> f64 {
    let parent: HashMap<BlockId, Option<BlockId>> =
        blocks.iter().map(|b| (b.id, b.parent)).collect();
    let mut orphans_by_parent: HashMap<BlockId, usize> = HashMap::new();
    for c in &chain.orphans {
        if let Some(Some(p)) = parent.get(c) {
            *orphans_by_parent.entry(*p).or_default() += 1;
        }
    }
    let sum: usize = chain
        .blocks
        .iter()
        .filter_map(|b| parent.get(b).copied().flatten())
        .map(|p| orphans_by_parent.get(&p).copied().unwrap_or(0))
        .sum();
    sum as f64 / chain.blocks.len() as f64
}

/// `D(G) * tau_block - T_slot` with the measured diameter; positive values
/// predict a breakdown of consensus.
pub fn threshold_margin(
    graph: &PeerGraph,
    tau_block: f64,
    slot_duration: f64,
) -> Result<f64, TopologyError> {
    Ok(diameter(graph)? as f64 * tau_block - slot_duration)
}

/// Same margin with the diameter replaced by its ER concentration value.
pub fn predicted_threshold_margin(
    n: usize,
    p: f64,
    tau_block: f64,
    slot_duration: f64,
) -> Result<f64, TopologyError> {
    Ok(predicted_diameter(n, p)? * tau_block - slot_duration)
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    BlockTree(#[from] BlockTreeError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

impl ConsensusReport {
    pub fn from_trace(trace: &SimulationTrace) -> Result<Self, MetricsError> {
        let chain = mainchain(&trace.blocks, &trace.attestations)?;
        let cfg = &trace.config;
        let graph = &trace.graph;
        let observed = diameter(graph)?;
        let n = graph.node_count();
        let p = if n > 1 {
            cfg.avg_degree / (n as f64 - 1.0)
        } else {
            0.0
        };
        let predicted = predicted_diameter(n, p).ok();
        Ok(Self {
            mainchain_rate: mainchain_rate(&trace.blocks, &chain),
            branching_ratio: branching_ratio(&trace.blocks, &chain),
            total_blocks: trace.blocks.len(),
            mainchain_blocks: chain.blocks.len(),
            orphaned: chain.orphans.len(),
            observed_diameter: observed,
            predicted_diameter: predicted,
            threshold_margin: observed as f64 * cfg.tau_block - cfg.slot_duration,
            predicted_threshold_margin: predicted
                .map(|d| d * cfg.tau_block - cfg.slot_duration),
        })
    }
}
