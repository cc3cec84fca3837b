// SPDX-License-Identifier: Apache-2.0

//! Honest validator agent: local blocktree view, latest-message table,
//! attestation cache and per-neighbor relay bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;
use rand::Rng;
use thiserror::Error;

use crate::blocktree::{
    canonical_chain, ghost_walk, Attestation, Block, BlockId, BlockTreeError, BlockTreeView,
    LatestMessageTable, Slot, ValidatorId, GENESIS,
};
use crate::topology::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidatorError {
    #[error("validator {validator} already attested in slot {slot}")]
    DoubleAttestation { validator: ValidatorId, slot: Slot },
    #[error("validator {validator} cannot attest to unknown block {block}")]
    UnknownTarget { validator: ValidatorId, block: BlockId },
    #[error("malformed chain: {0}")]
    MalformedChain(#[source] BlockTreeError),
    #[error("{0} is not a neighbor of validator {1}")]
    NotANeighbor(NodeId, ValidatorId),
}

/// Global id source for blocks and attestations within one realisation.
#[derive(Debug, Clone)]
pub struct Sequencer {
    next_block: BlockId,
    next_attestation: u64,
}

impl Default for Sequencer {
    fn default() -> Self {
        Self {
            next_block: GENESIS + 1,
            next_attestation: 0,
        }
    }
}

impl Sequencer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_block_id(&mut self) -> BlockId {
        let id = self.next_block;
        self.next_block += 1;
        id
    }

    pub fn next_attestation_seq(&mut self) -> u64 {
        let seq = self.next_attestation;
        self.next_attestation += 1;
        seq
    }
}

/// Outgoing relay state towards one neighbor.
#[derive(Debug, Clone)]
struct RelayChannel {
    peer: NodeId,
    /// Attestation seqs already sent to `peer`. Only ever grows.
    sent: FixedBitSet,
    /// Relay candidates not yet sent. May hold entries that have since been
    /// superseded in the table; those are dropped lazily on selection.
    pending: Vec<Attestation>,
}

#[derive(Debug, Clone)]
pub struct ValidatorState {
    id: ValidatorId,
    view: BlockTreeView,
    table: LatestMessageTable,
    /// Keyed by attestation seq.
    cache: BTreeMap<u64, Attestation>,
    produced_attestation_slots: BTreeSet<Slot>,
    committee_slots: BTreeSet<Slot>,
    relay: Vec<RelayChannel>,
    head: Option<BlockId>,
}

impl ValidatorState {
    /// Fresh validator knowing only genesis. `neighbors` must be sorted.
    pub fn new(id: ValidatorId, neighbors: &[NodeId], validator_count: usize) -> Self {
        Self {
            id,
            view: BlockTreeView::with_genesis(),
            table: LatestMessageTable::with_validators(validator_count),
            cache: BTreeMap::new(),
            produced_attestation_slots: BTreeSet::new(),
            committee_slots: BTreeSet::new(),
            relay: neighbors
                .iter()
                .map(|&peer| RelayChannel {
                    peer,
                    sent: FixedBitSet::new(),
                    pending: Vec::new(),
                })
                .collect(),
            head: Some(GENESIS),
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn view(&self) -> &BlockTreeView {
        &self.view
    }

    pub fn table(&self) -> &LatestMessageTable {
        &self.table
    }

    /// Attestations waiting for their block, in issuance order.
    pub fn cache(&self) -> impl ExactSizeIterator<Item = &Attestation> {
        self.cache.values()
    }

    pub fn has_attested(&self, slot: Slot) -> bool {
        self.produced_attestation_slots.contains(&slot)
    }

    pub fn attested_slots(&self) -> &BTreeSet<Slot> {
        &self.produced_attestation_slots
    }

    pub fn assign_committee(&mut self, slot: Slot) {
        self.committee_slots.insert(slot);
    }

    pub fn is_committee_member(&self, slot: Slot) -> bool {
        self.committee_slots.contains(&slot)
    }

    /// LMD GHOST head from genesis over the local view and table. Cached
    /// until the view or table changes.
    pub fn head(&mut self) -> BlockId {
        if let Some(h) = self.head {
            return h;
        }
        let h = if self.view.len() == 1 {
            GENESIS
        } else {
            let weights = self.view.subtree_weights(&self.table);
            ghost_walk(&self.view, &weights, GENESIS)
        };
        self.head = Some(h);
        h
    }

    /// Blocks on the genesis-to-head path, parent first.
    pub fn canonical_chain_blocks(&mut self) -> Vec<Block> {
        let head = self.head();
        canonical_chain(&self.view, head)
            .expect("head is in the view")
            .into_iter()
            .map(|id| *self.view.get(id).expect("chain blocks are in the view"))
            .collect()
    }

    /// Builds a block on the local head and adds it to the local view.
    pub fn propose(&mut self, slot: Slot, ids: &mut Sequencer) -> Block {
        let parent = self.head();
        let block = Block {
            id: ids.next_block_id(),
            parent: Some(parent),
            slot,
            proposer: Some(self.id),
        };
        self.view
            .insert(block)
            .expect("a fresh block on the local head is always insertable");
        self.head = None;
        block
    }

    /// Issues this slot's attestation and applies it to the local table.
    pub fn attest(
        &mut self,
        slot: Slot,
        target: BlockId,
        ids: &mut Sequencer,
    ) -> Result<Attestation, ValidatorError> {
        if self.has_attested(slot) {
            return Err(ValidatorError::DoubleAttestation {
                validator: self.id,
                slot,
            });
        }
        if !self.view.contains(target) {
            return Err(ValidatorError::UnknownTarget {
                validator: self.id,
                block: target,
            });
        }
        let a = Attestation {
            validator: self.id,
            block: target,
            slot,
            seq: ids.next_attestation_seq(),
        };
        self.produced_attestation_slots.insert(slot);
        self.accept(a);
        // Own votes stay relayable even after a newer own vote supersedes
        // them in the table, so make sure this one is queued.
        if !self.table.get(self.id).is_some_and(|e| e.seq == a.seq) {
            self.enqueue_relay(a);
        }
        Ok(a)
    }

    /// Handles a gossiped canonical chain. Returns the early attestation if
    /// the chain carried the current slot's block from its expected proposer
    /// and this validator still owes a vote for the slot.
    pub fn on_chain_received(
        &mut self,
        chain: &[Block],
        current_slot: Slot,
        expected_proposer: Option<ValidatorId>,
        ids: &mut Sequencer,
    ) -> Result<Option<Attestation>, ValidatorError> {
        let mut inserted = false;
        for b in chain {
            inserted |= self
                .view
                .insert(*b)
                .map_err(ValidatorError::MalformedChain)?;
        }
        if inserted {
            self.head = None;
            self.flush_cache();
        }

        if !self.is_committee_member(current_slot) || self.has_attested(current_slot) {
            return Ok(None);
        }
        let Some(proposer) = expected_proposer else {
            return Ok(None);
        };
        let slot_block = chain
            .iter()
            .find(|b| b.slot == current_slot && b.proposer == Some(proposer));
        match slot_block {
            Some(b) => self.attest(current_slot, b.id, ids).map(Some),
            None => Ok(None),
        }
    }

    /// Applies a gossiped attestation, caching it if its block is unknown.
    pub fn on_attestation_received(&mut self, a: Attestation) {
        if self.view.contains(a.block) {
            self.accept(a);
        } else {
            self.cache.entry(a.seq).or_insert(a);
        }
    }

    /// Threshold-time vote for the local head, unless already attested.
    pub fn attest_at_threshold(&mut self, slot: Slot, ids: &mut Sequencer) -> Option<Attestation> {
        if self.has_attested(slot) {
            return None;
        }
        let head = self.head();
        Some(
            self.attest(slot, head, ids)
                .expect("head is known and slot is unattested"),
        )
    }

    /// Picks a uniformly random attestation not yet sent to `peer` from the
    /// latest-message table plus this validator's own issued votes, and
    /// records it as sent.
    pub fn next_relay<R: Rng + ?Sized>(
        &mut self,
        peer: NodeId,
        rng: &mut R,
    ) -> Result<Option<Attestation>, ValidatorError> {
        let idx = self
            .relay
            .binary_search_by_key(&peer, |c| c.peer)
            .map_err(|_| ValidatorError::NotANeighbor(peer, self.id))?;
        let own = self.id;
        let channel = &mut self.relay[idx];
        while !channel.pending.is_empty() {
            let pick = rng.gen_range(0..channel.pending.len());
            let a = channel.pending.swap_remove(pick);
            let current = a.validator == own || self.table.get(a.validator).is_some_and(|e| e.seq == a.seq);
            if current {
                let bit = a.seq as usize;
                if bit >= channel.sent.len() {
                    channel.sent.grow((bit + 1).next_power_of_two());
                }
                channel.sent.insert(bit);
                return Ok(Some(a));
            }
        }
        Ok(None)
    }

    /// Whether `seq` has been relayed to `peer`.
    pub fn relayed_to(&self, peer: NodeId, seq: u64) -> bool {
        self.relay
            .binary_search_by_key(&peer, |c| c.peer)
            .is_ok_and(|idx| self.relay[idx].sent.contains(seq as usize))
    }

    fn accept(&mut self, a: Attestation) -> bool {
        let accepted = self.table.update(a);
        if accepted {
            self.head = None;
            self.enqueue_relay(a);
        }
        accepted
    }

    fn enqueue_relay(&mut self, a: Attestation) {
        for channel in &mut self.relay {
            if !channel.sent.contains(a.seq as usize) {
                channel.pending.push(a);
            }
        }
    }

    fn flush_cache(&mut self) {
        let mut ready = Vec::new();
        self.cache.retain(|_, a| {
            let known = self.view.contains(a.block);
            if known {
                ready.push(*a);
            }
            !known
        });
        // Issuance order, so equal-slot votes resolve deterministically.
        for a in ready {
            self.accept(a);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocktree::lmd_ghost_head;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(id: BlockId, parent: BlockId, slot: Slot, proposer: ValidatorId) -> Block {
        Block {
            id,
            parent: Some(parent),
            slot,
            proposer: Some(proposer),
        }
    }

    fn vote(validator: ValidatorId, block: BlockId, slot: Slot, seq: u64) -> Attestation {
        Attestation {
            validator,
            block,
            slot,
            seq,
        }
    }

    #[test]
    fn fresh_proposal_builds_on_genesis() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[1], 2);
        let b = v.propose(1, &mut ids);
        assert_eq!(b.parent, Some(GENESIS));
        assert_eq!(b.slot, 1);
        assert_eq!(b.proposer, Some(0));
        assert!(v.view().contains(b.id));
        assert_eq!(v.head(), b.id);
    }

    #[test]
    fn proposal_builds_on_local_head() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 3);
        let chain = [Block::genesis(), block(1, 0, 3, 2)];
        ids.next_block_id();
        v.on_chain_received(&chain, 3, Some(2), &mut ids).unwrap();
        let b = v.propose(7, &mut ids);
        assert_eq!(b.parent, Some(1));
        assert_eq!(b.slot, 7);
    }

    #[test]
    fn attest_once_per_slot_with_self_observation() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(4, &[], 5);
        v.assign_committee(1);
        let a = v.attest_at_threshold(1, &mut ids).unwrap();
        assert_eq!((a.validator, a.block, a.slot), (4, GENESIS, 1));
        assert_eq!(v.table().get(4), Some(&a));
        assert_eq!(
            v.attest(1, GENESIS, &mut ids),
            Err(ValidatorError::DoubleAttestation {
                validator: 4,
                slot: 1
            })
        );
        assert_eq!(v.attest_at_threshold(1, &mut ids), None);
        assert_eq!(
            v.attest(2, 9, &mut ids),
            Err(ValidatorError::UnknownTarget {
                validator: 4,
                block: 9
            })
        );
    }

    #[test]
    fn chain_outside_committee_only_extends_view() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 2);
        let out = v
            .on_chain_received(&[Block::genesis(), block(1, 0, 1, 1)], 1, Some(1), &mut ids)
            .unwrap();
        assert_eq!(out, None);
        assert!(v.view().contains(1));
    }

    #[test]
    fn committee_member_attests_early_for_expected_block() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 2);
        v.assign_committee(1);
        let out = v
            .on_chain_received(&[Block::genesis(), block(1, 0, 1, 1)], 1, Some(1), &mut ids)
            .unwrap()
            .unwrap();
        assert_eq!((out.block, out.slot), (1, 1));
        assert!(v.has_attested(1));
    }

    #[test]
    fn wrong_proposer_does_not_trigger_early_vote() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 3);
        v.assign_committee(1);
        let out = v
            .on_chain_received(&[Block::genesis(), block(1, 0, 1, 2)], 1, Some(1), &mut ids)
            .unwrap();
        assert_eq!(out, None);
    }

    #[test]
    fn cache_flushes_on_block_arrival() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 3);
        v.on_attestation_received(vote(2, 1, 1, 0));
        v.on_attestation_received(vote(2, 1, 1, 0));
        assert_eq!(v.cache().len(), 1);
        assert!(v.table().is_empty());
        v.on_chain_received(&[Block::genesis(), block(1, 0, 1, 1)], 1, Some(1), &mut ids)
            .unwrap();
        assert_eq!(v.cache().len(), 0);
        assert_eq!(v.table().get(2).unwrap().block, 1);
    }

    #[test]
    fn known_block_attestation_updates_table() {
        let mut v = ValidatorState::new(0, &[], 3);
        v.on_attestation_received(vote(1, GENESIS, 1, 0));
        assert_eq!(v.table().get(1).unwrap().slot, 1);
        v.on_attestation_received(vote(1, GENESIS, 1, 5));
        assert_eq!(v.table().get(1).unwrap().seq, 0);
    }

    #[test]
    fn gap_in_chain_is_rejected() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 3);
        let err = v
            .on_chain_received(&[Block::genesis(), block(2, 1, 2, 1)], 2, Some(1), &mut ids)
            .unwrap_err();
        assert!(matches!(err, ValidatorError::MalformedChain(_)));
    }

    #[test]
    fn threshold_vote_falls_back_to_previous_head() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 3);
        ids.next_block_id();
        v.on_chain_received(&[Block::genesis(), block(1, 0, 1, 1)], 1, Some(1), &mut ids)
            .unwrap();
        v.assign_committee(2);
        let a = v.attest_at_threshold(2, &mut ids).unwrap();
        assert_eq!(a.block, 1);
    }

    #[test]
    fn voting_for_head_keeps_head() {
        let mut ids = Sequencer::new();
        let mut v = ValidatorState::new(0, &[], 4);
        let chain = [Block::genesis(), block(1, 0, 1, 1), block(2, 0, 2, 2)];
        for _ in 0..2 {
            ids.next_block_id();
        }
        v.on_chain_received(&chain[..2], 2, None, &mut ids).unwrap();
        v.on_chain_received(&[Block::genesis(), chain[2]], 2, None, &mut ids)
            .unwrap();
        v.on_attestation_received(vote(3, 2, 2, 0));
        let before = v.head();
        v.attest(3, before, &mut ids).unwrap();
        assert_eq!(v.head(), before);
        assert_eq!(lmd_ghost_head(v.view(), v.table(), GENESIS).unwrap(), before);
    }

    #[test]
    fn relay_sends_each_identity_once() {
        let mut ids = Sequencer::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = ValidatorState::new(0, &[1, 2], 4);
        v.on_attestation_received(vote(3, GENESIS, 1, 10));
        v.assign_committee(1);
        let own = v.attest_at_threshold(1, &mut ids).unwrap();
        let mut sent = Vec::new();
        while let Some(a) = v.next_relay(1, &mut rng).unwrap() {
            sent.push(a.seq);
        }
        sent.sort_unstable();
        assert_eq!(sent, vec![own.seq, 10]);
        assert!(v.relayed_to(1, 10));
        assert!(!v.relayed_to(2, 10));
        assert_eq!(v.next_relay(1, &mut rng), Ok(None));
        assert_eq!(
            v.next_relay(3, &mut rng),
            Err(ValidatorError::NotANeighbor(3, 0))
        );
    }

    #[test]
    fn superseded_votes_are_not_relayed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = ValidatorState::new(0, &[1], 4);
        v.on_attestation_received(vote(3, GENESIS, 1, 1));
        v.on_attestation_received(vote(3, GENESIS, 2, 2));
        assert_eq!(v.next_relay(1, &mut rng).unwrap().map(|a| a.seq), Some(2));
        assert_eq!(v.next_relay(1, &mut rng), Ok(None));
    }

    #[test]
    fn old_own_votes_remain_relayable() {
        let mut ids = Sequencer::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = ValidatorState::new(0, &[1], 2);
        v.attest(1, GENESIS, &mut ids).unwrap();
        v.attest(2, GENESIS, &mut ids).unwrap();
        let mut sent = Vec::new();
        while let Some(a) = v.next_relay(1, &mut rng).unwrap() {
            sent.push(a.slot);
        }
        sent.sort_unstable();
        assert_eq!(sent, vec![1, 2]);
    }
}
