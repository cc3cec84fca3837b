// SPDX-License-Identifier: Apache-2.0

//! Gillespie-style event loop with fixed-time protocol events.
//!
//! Stochastic gossip events fire on `2E` directed channels, each running a
//! block clock at rate `1/tau_block` and an attestation clock at rate
//! `1/tau_attestation`. The superposition is a single exponential clock of
//! rate `2E (1/tau_block + 1/tau_attestation)`.
//!
//! Fixed events (epoch boundary, slot boundary, attestation threshold) are
//! pre-scheduled. When a sampled stochastic arrival lands at or after the
//! next fixed event, the fixed event runs first and the same arrival is
//! compared again against the following fixed event.
//!
//! All randomness comes from one ChaCha8 stream seeded with
//! [`SimConfig::seed`], consumed in this order: topology generation, then
//! per event as the loop proceeds (committee shuffle at each epoch
//! boundary, proposer at each slot boundary, and for each stochastic event:
//! delay, kind, channel, relayed attestation).

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::blocktree::{dump_blocks, Attestation, Block, Slot, ValidatorId};
use crate::topology::{
    sample_directed_channel, ErdosRenyi, GraphGenerator, NodeId, PeerGraph, TopologyError,
};
use crate::validator::{Sequencer, ValidatorError, ValidatorState};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invariant violated at t={time:.6}: {msg}")]
    Invariant { time: f64, msg: String },
    #[error(transparent)]
    Validator(#[from] ValidatorError),
}

/// How much of the event stream to keep in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Verbosity {
    #[default]
    Quiet,
    /// Fixed-time events only.
    Fixed,
    /// Every executed event.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub avg_degree: f64,
    /// Mean per-channel waiting time between block gossips, in seconds.
    /// `f64::INFINITY` disables block gossip.
    pub tau_block: f64,
    /// Same for attestation gossip.
    pub tau_attestation: f64,
    pub slot_duration: f64,
    pub attestation_offset: f64,
    pub slots_per_epoch: usize,
    pub horizon: f64,
    pub seed: u64,
    pub verbosity: Verbosity,
    /// Test switch: with `false` only stochastic events run.
    pub fixed_events: bool,
    /// Re-check per-node invariants after every event. Slow.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_nodes: 128,
            avg_degree: 8.0,
            tau_block: 1.0,
            tau_attestation: 1.0,
            slot_duration: 12.0,
            attestation_offset: 4.0,
            slots_per_epoch: 1,
            horizon: 300.0,
            seed: 0,
            verbosity: Verbosity::Quiet,
            fixed_events: true,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive".into());
        }
        if !(self.avg_degree > 0.0) {
            return bad(format!("avg_degree must be positive, got {}", self.avg_degree));
        }
        for (name, tau) in [
            ("tau_block", self.tau_block),
            ("tau_attestation", self.tau_attestation),
        ] {
            if !(tau > 0.0) {
                return bad(format!("{name} must be positive, got {tau}"));
            }
        }
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return bad(format!("slot_duration must be positive, got {}", self.slot_duration));
        }
        if !(self.attestation_offset > 0.0 && self.attestation_offset < self.slot_duration) {
            return bad(format!(
                "attestation_offset must lie in (0, slot_duration), got {}",
                self.attestation_offset
            ));
        }
        if self.slots_per_epoch == 0 {
            return bad("slots_per_epoch must be positive".into());
        }
        if !(self.horizon >= self.slot_duration && self.horizon.is_finite()) {
            return bad(format!(
                "horizon must be finite and at least one slot, got {}",
                self.horizon
            ));
        }
        Ok(())
    }
}

/// Per-channel and aggregate gossip rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRates {
    pub lambda_block: f64,
    pub lambda_attestation: f64,
    pub channels: usize,
}

impl EventRates {
    /// An infinite `tau` yields a zero rate.
    pub fn new(channels: usize, tau_block: f64, tau_attestation: f64) -> Self {
        Self {
            lambda_block: tau_block.recip(),
            lambda_attestation: tau_attestation.recip(),
            channels,
        }
    }

    /// System-wide rate of the next stochastic event.
    pub fn total(&self) -> f64 {
        self.channels as f64 * (self.lambda_block + self.lambda_attestation)
    }

    pub fn attestation_probability(&self) -> f64 {
        self.lambda_attestation / (self.lambda_attestation + self.lambda_block)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StochasticKind {
    BlockGossip,
    AttestationGossip,
}

/// Waiting time to the next stochastic event, `Exp(rates.total())`.
pub fn next_stochastic_delay<R: Rng + ?Sized>(rates: &EventRates, rng: &mut R) -> f64 {
    let lambda = rates.total();
    debug_assert!(lambda > 0.0 && lambda.is_finite());
    Exp::new(lambda)
        .expect("positive finite rate")
        .sample(rng)
}

pub fn select_event_kind<R: Rng + ?Sized>(rates: &EventRates, rng: &mut R) -> StochasticKind {
    if rng.gen::<f64>() < rates.attestation_probability() {
        StochasticKind::AttestationGossip
    } else {
        StochasticKind::BlockGossip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedEventKind {
    EpochBoundary { epoch: u64 },
    SlotBoundary { slot: Slot },
    AttestationThreshold { slot: Slot },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedEvent {
    pub time: f64,
    pub kind: FixedEventKind,
}

/// Time-ordered fixed events.
///
/// Slot `k + 1` starts at `k * slot_duration` (genesis owns slot 0); slots
/// are scheduled while their start lies strictly before the horizon.
/// Every `slots_per_epoch`-th slot boundary is preceded by an epoch
/// boundary at the same instant. Thresholds are kept only up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEventSchedule {
    events: Vec<FixedEvent>,
}

impl FixedEventSchedule {
    pub fn new(config: &SimConfig) -> Self {
        let mut events = Vec::new();
        let m = config.slots_per_epoch as u64;
        let mut k = 0u64;
        loop {
            let start = k as f64 * config.slot_duration;
            if start >= config.horizon {
                break;
            }
            let slot = k + 1;
            if k % m == 0 {
                events.push(FixedEvent {
                    time: start,
                    kind: FixedEventKind::EpochBoundary { epoch: k / m },
                });
            }
            events.push(FixedEvent {
                time: start,
                kind: FixedEventKind::SlotBoundary { slot },
            });
            let threshold = start + config.attestation_offset;
            if threshold <= config.horizon {
                events.push(FixedEvent {
                    time: threshold,
                    kind: FixedEventKind::AttestationThreshold { slot },
                });
            }
            k += 1;
        }
        Self { events }
    }

    pub fn empty() -> Self {
        Self { events: Vec::new() }
    }

    pub fn events(&self) -> &[FixedEvent] {
        &self.events
    }

    pub fn slot_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, FixedEventKind::SlotBoundary { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fixed(FixedEventKind),
    Gossip {
        kind: StochasticKind,
        sender: NodeId,
        receiver: NodeId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9} ", self.time)?;
        match self.kind {
            EventKind::Fixed(FixedEventKind::EpochBoundary { epoch }) => write!(f, "epoch {epoch}"),
            EventKind::Fixed(FixedEventKind::SlotBoundary { slot }) => write!(f, "slot {slot}"),
            EventKind::Fixed(FixedEventKind::AttestationThreshold { slot }) => {
                write!(f, "threshold {slot}")
            }
            EventKind::Gossip {
                kind,
                sender,
                receiver,
            } => {
                let name = match kind {
                    StochasticKind::BlockGossip => "block",
                    StochasticKind::AttestationGossip => "attestation",
                };
                write!(f, "{name} {sender} {receiver}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub config: SimConfig,
    pub graph: PeerGraph,
    /// Every block ever created, genesis first; index equals block id.
    pub blocks: Vec<Block>,
    /// Every attestation ever issued; index equals seq.
    pub attestations: Vec<Attestation>,
    /// `(slot, proposer)` for every slot boundary executed.
    pub proposers: Vec<(Slot, ValidatorId)>,
    /// Committees per slot, indexed by `slot - 1`.
    pub committees: Vec<Vec<ValidatorId>>,
    pub events: Vec<EventRecord>,
    pub block_gossip_events: u64,
    pub attestation_gossip_events: u64,
    pub final_time: f64,
    pub final_states: Vec<ValidatorState>,
}

impl SimulationTrace {
    pub fn dump_tree(&self) -> String {
        dump_blocks(&self.blocks)
    }

    /// One `seq slot validator block` line per attestation.
    pub fn attestation_log(&self) -> String {
        let mut out = String::new();
        for a in &self.attestations {
            let _ = writeln!(out, "{} {} {} {}", a.seq, a.slot, a.validator, a.block);
        }
        out
    }

    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(out, "{e}");
        }
        out
    }

    /// Blocktree dump followed by the attestation log.
    pub fn dump(&self) -> String {
        format!("{}\n{}", self.dump_tree(), self.attestation_log())
    }
}

/// One realisation: owns all agent state and the random stream.
pub struct Simulation {
    config: SimConfig,
    graph: PeerGraph,
    rates: EventRates,
    rng: ChaCha8Rng,
    nodes: Vec<ValidatorState>,
    ids: Sequencer,
    blocks: Vec<Block>,
    attestations: Vec<Attestation>,
    proposers: Vec<(Slot, ValidatorId)>,
    committees: Vec<Vec<ValidatorId>>,
    events: Vec<EventRecord>,
    block_gossip_events: u64,
    attestation_gossip_events: u64,
    clock: f64,
    current_slot: Slot,
    current_proposer: Option<ValidatorId>,
}

impl Simulation {
    /// Draws an ER topology from the seeded stream.
    pub fn new(config: SimConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let graph = ErdosRenyi {
            nodes: config.n_nodes,
            avg_degree: config.avg_degree,
        }
        .generate(&mut rng)?;
        Ok(Self::assemble(config, graph, rng))
    }

    /// Uses a caller-supplied topology; `n_nodes` and `avg_degree` in the
    /// config are overwritten from it.
    pub fn with_graph(mut config: SimConfig, graph: PeerGraph) -> Result<Self, EngineError> {
        config.n_nodes = graph.node_count();
        config.avg_degree = graph.mean_degree().max(f64::MIN_POSITIVE);
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::assemble(config, graph, rng))
    }

    fn assemble(config: SimConfig, graph: PeerGraph, rng: ChaCha8Rng) -> Self {
        let n = graph.node_count();
        let nodes = (0..n as NodeId)
            .map(|id| ValidatorState::new(id, graph.neighbors(id), n))
            .collect();
        let rates = EventRates::new(
            graph.channel_count(),
            config.tau_block,
            config.tau_attestation,
        );
        Self {
            config,
            graph,
            rates,
            rng,
            nodes,
            ids: Sequencer::new(),
            blocks: vec![Block::genesis()],
            attestations: Vec::new(),
            proposers: Vec::new(),
            committees: Vec::new(),
            events: Vec::new(),
            block_gossip_events: 0,
            attestation_gossip_events: 0,
            clock: 0.0,
            current_slot: 0,
            current_proposer: None,
        }
    }

    pub fn graph(&self) -> &PeerGraph {
        &self.graph
    }

    pub fn rates(&self) -> &EventRates {
        &self.rates
    }

    pub fn nodes(&self) -> &[ValidatorState] {
        &self.nodes
    }

    pub fn run(mut self) -> Result<SimulationTrace, EngineError> {
        let schedule = if self.config.fixed_events {
            FixedEventSchedule::new(&self.config)
        } else {
            FixedEventSchedule::empty()
        };
        let horizon = self.config.horizon;
        let stochastic = self.rates.total() > 0.0;
        let mut fixed = schedule.events().iter().peekable();
        let mut pending_arrival: Option<f64> = None;

        loop {
            if pending_arrival.is_none() && stochastic {
                pending_arrival = Some(self.clock + next_stochastic_delay(&self.rates, &mut self.rng));
            }
            let arrival = pending_arrival.unwrap_or(f64::INFINITY);
            // Fixed events win ties with a stochastic arrival.
            if let Some(&&event) = fixed.peek() {
                if arrival >= event.time {
                    fixed.next();
                    self.clock = event.time;
                    self.execute_fixed(event)?;
                    continue;
                }
            }
            if arrival > horizon {
                break;
            }
            self.clock = arrival;
            pending_arrival = None;
            self.execute_stochastic()?;
        }
        self.finish()
    }

    fn record(&mut self, kind: EventKind) {
        let keep = match (self.config.verbosity, kind) {
            (Verbosity::All, _) => true,
            (Verbosity::Fixed, EventKind::Fixed(_)) => true,
            _ => false,
        };
        if keep {
            self.events.push(EventRecord {
                time: self.clock,
                kind,
            });
        }
    }

    fn execute_fixed(&mut self, event: FixedEvent) -> Result<(), EngineError> {
        self.record(EventKind::Fixed(event.kind));
        match event.kind {
            FixedEventKind::EpochBoundary { epoch } => self.handle_epoch_boundary(epoch),
            FixedEventKind::SlotBoundary { slot } => self.handle_slot_boundary(slot)?,
            FixedEventKind::AttestationThreshold { slot } => {
                self.handle_attestation_threshold(slot)?
            }
        }
        if self.config.check_invariants {
            for i in 0..self.nodes.len() {
                self.check_node(i as NodeId)?;
            }
        }
        Ok(())
    }

    /// Samples committees for the epoch's slots: a random partition of all
    /// validators into `m` groups of `floor(V/m)`, with the `V mod m` extra
    /// validators going one each to distinct committees.
    pub fn handle_epoch_boundary(&mut self, epoch: u64) {
        let m = self.config.slots_per_epoch;
        let mut validators: Vec<ValidatorId> = (0..self.nodes.len() as ValidatorId).collect();
        validators.shuffle(&mut self.rng);
        let base = validators.len() / m;
        let extra = validators.len() % m;
        let first_slot = epoch * m as u64 + 1;
        let mut rest = validators.as_slice();
        for i in 0..m {
            let size = base + usize::from(i < extra);
            let (committee, tail) = rest.split_at(size);
            rest = tail;
            let slot = first_slot + i as u64;
            let mut committee = committee.to_vec();
            committee.sort_unstable();
            for &v in &committee {
                self.nodes[v as usize].assign_committee(slot);
            }
            let idx = (slot - 1) as usize;
            if self.committees.len() <= idx {
                self.committees.resize(idx + 1, Vec::new());
            }
            self.committees[idx] = committee;
        }
    }

    /// Picks a uniform proposer, which builds on its head and, if it sits in
    /// the slot's committee, votes for its own block straight away.
    pub fn handle_slot_boundary(&mut self, slot: Slot) -> Result<(), EngineError> {
        self.current_slot = slot;
        let proposer = self.rng.gen_range(0..self.nodes.len()) as ValidatorId;
        self.current_proposer = Some(proposer);
        self.proposers.push((slot, proposer));
        let node = &mut self.nodes[proposer as usize];
        let block = node.propose(slot, &mut self.ids);
        if block.id as usize != self.blocks.len() {
            return Err(self.invariant(format!("block id {} out of sequence", block.id)));
        }
        self.blocks.push(block);
        if node.is_committee_member(slot) {
            let a = node.attest(slot, block.id, &mut self.ids)?;
            self.log_attestation(a)?;
        }
        Ok(())
    }

    /// Committee members still owing a vote attest for their local head.
    pub fn handle_attestation_threshold(&mut self, slot: Slot) -> Result<(), EngineError> {
        let members = self
            .committees
            .get((slot - 1) as usize)
            .cloned()
            .unwrap_or_default();
        for v in members {
            if let Some(a) = self.nodes[v as usize].attest_at_threshold(slot, &mut self.ids) {
                self.log_attestation(a)?;
            }
        }
        Ok(())
    }

    fn execute_stochastic(&mut self) -> Result<(), EngineError> {
        let kind = select_event_kind(&self.rates, &mut self.rng);
        let (sender, receiver) = sample_directed_channel(&self.graph, &mut self.rng)?;
        self.record(EventKind::Gossip {
            kind,
            sender,
            receiver,
        });
        match kind {
            StochasticKind::BlockGossip => {
                self.block_gossip_events += 1;
                self.block_gossip(sender, receiver)?;
            }
            StochasticKind::AttestationGossip => {
                self.attestation_gossip_events += 1;
                let relayed = self.nodes[sender as usize].next_relay(receiver, &mut self.rng)?;
                if let Some(a) = relayed {
                    self.nodes[receiver as usize].on_attestation_received(a);
                }
            }
        }
        if self.config.check_invariants {
            self.check_node(receiver)?;
        }
        Ok(())
    }

    fn block_gossip(&mut self, sender: NodeId, receiver: NodeId) -> Result<(), EngineError> {
        let slot = self.current_slot;
        let head = self.nodes[sender as usize].head();
        let rx = &self.nodes[receiver as usize];
        // A receiver that already holds the sender's head holds its whole
        // chain, and could only have got this slot's block through a path
        // that already made it vote. Nothing would change.
        if rx.view().contains(head) && (!rx.is_committee_member(slot) || rx.has_attested(slot)) {
            return Ok(());
        }
        let chain = self.nodes[sender as usize].canonical_chain_blocks();
        let early = self.nodes[receiver as usize].on_chain_received(
            &chain,
            slot,
            self.current_proposer,
            &mut self.ids,
        )?;
        if let Some(a) = early {
            self.log_attestation(a)?;
        }
        Ok(())
    }

    fn log_attestation(&mut self, a: Attestation) -> Result<(), EngineError> {
        if a.seq as usize != self.attestations.len() {
            return Err(self.invariant(format!("attestation seq {} out of sequence", a.seq)));
        }
        self.attestations.push(a);
        Ok(())
    }

    fn check_node(&self, id: NodeId) -> Result<(), EngineError> {
        let node = &self.nodes[id as usize];
        for b in node.view().blocks() {
            if let Some(p) = b.parent {
                if !node.view().contains(p) {
                    return Err(self.invariant(format!("node {id}: block {} lacks parent {p}", b.id)));
                }
            }
        }
        if let Some(a) = node.cache().find(|a| node.view().contains(a.block)) {
            return Err(self.invariant(format!(
                "node {id}: cached attestation {} references known block {}",
                a.seq, a.block
            )));
        }
        Ok(())
    }

    fn invariant(&self, msg: String) -> EngineError {
        EngineError::Invariant {
            time: self.clock,
            msg,
        }
    }

    fn finish(self) -> Result<SimulationTrace, EngineError> {
        let trace = SimulationTrace {
            config: self.config,
            graph: self.graph,
            blocks: self.blocks,
            attestations: self.attestations,
            proposers: self.proposers,
            committees: self.committees,
            events: self.events,
            block_gossip_events: self.block_gossip_events,
            attestation_gossip_events: self.attestation_gossip_events,
            final_time: self.clock,
            final_states: self.nodes,
        };
        verify_attestation_uniqueness(&trace).map_err(|msg| EngineError::Invariant {
            time: trace.final_time,
            msg,
        })?;
        Ok(trace)
    }
}

fn verify_attestation_uniqueness(trace: &SimulationTrace) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    for a in &trace.attestations {
        if !seen.insert((a.validator, a.slot)) {
            return Err(format!(
                "validator {} attested twice in slot {}",
                a.validator, a.slot
            ));
        }
    }
    Ok(())
}

/// Generates the topology from `config.seed` and runs one realisation.
pub fn run(config: SimConfig) -> Result<SimulationTrace, EngineError> {
    Simulation::new(config)?.run()
}
