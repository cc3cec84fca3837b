// SPDX-License-Identifier: Apache-2.0

//! Agent-based simulation of LMD GHOST proof-of-stake consensus.
//!
//! Validators sit on a static peer-to-peer graph and gossip blocks and
//! attestations over its links with exponentially distributed latencies,
//! while slots, epochs and attestation deadlines tick on a fixed clock.
//! The finished blocktree is scored from the point of view of an observer
//! with zero latency.
//!
//! - [`topology`]: peer graphs, ER sampling, diameters.
//! - [`blocktree`]: blocks, votes, latest-message tables, LMD GHOST.
//! - [`validator`]: honest agent behaviour.
//! - [`engine`]: the event loop.
//! - [`metrics`]: mainchain rate and branching ratio.

pub mod blocktree;
pub mod engine;
pub mod metrics;
pub mod topology;
pub mod validator;

pub use blocktree::{Attestation, Block, BlockId, Slot, ValidatorId, GENESIS};
pub use engine::{run, SimConfig, Simulation, SimulationTrace, Verbosity};
pub use metrics::ConsensusReport;
pub use topology::{NodeId, PeerGraph};
