// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;

use common::stats::{chi_square_uniform, ks_exponential};
use gasper_abm::engine::{EventKind, FixedEventKind, Simulation, StochasticKind, Verbosity};
use gasper_abm::metrics::{mainchain, omniscient_head, ConsensusReport};
use gasper_abm::topology::generate_er;
use gasper_abm::{run, PeerGraph, SimConfig, GENESIS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn base() -> SimConfig {
    SimConfig {
        n_nodes: 32,
        avg_degree: 6.0,
        ..SimConfig::default()
    }
}

#[test]
fn counts_are_conserved() {
    for (seed, tau) in [(1, 0.1), (2, 3.0), (3, 40.0), (4, 900.0)] {
        let trace = run(SimConfig {
            seed,
            tau_block: tau,
            tau_attestation: tau,
            ..base()
        })
        .unwrap();
        assert_eq!(trace.proposers.len(), 25);
        assert_eq!(trace.blocks.len(), 26);
        let mut per_slot = BTreeMap::new();
        for a in &trace.attestations {
            *per_slot.entry(a.slot).or_insert(0usize) += 1;
        }
        assert_eq!(per_slot.len(), 25);
        assert!(per_slot.values().all(|&c| c == 32), "{per_slot:?}");
        let m = mainchain(&trace.blocks, &trace.attestations).unwrap();
        assert_eq!(m.blocks.len() + m.orphans.len(), trace.blocks.len());
        for state in &trace.final_states {
            for b in state.view().blocks() {
                if let Some(p) = b.parent {
                    assert!(state.view().contains(p));
                }
            }
            assert!(state.cache().all(|a| !state.view().contains(a.block)));
            assert_eq!(state.attested_slots().len(), 25);
        }
    }
}

#[test]
fn committees_partition_validators_each_slot() {
    let trace = run(SimConfig {
        slots_per_epoch: 3,
        n_nodes: 10,
        avg_degree: 4.0,
        ..SimConfig::default()
    })
    .unwrap();
    for epoch in trace.committees.chunks(3).filter(|c| c.len() == 3) {
        let mut all: Vec<u32> = epoch.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let mut sizes: Vec<usize> = epoch.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }
    // Attestations per slot equal committee size.
    for (idx, committee) in trace.committees.iter().enumerate().take(trace.proposers.len()) {
        let slot = idx as u64 + 1;
        let n = trace.attestations.iter().filter(|a| a.slot == slot).count();
        assert_eq!(n, committee.len());
    }
}

#[test]
fn identical_configs_give_identical_traces() {
    let config = SimConfig {
        seed: 99,
        tau_block: 4.0,
        verbosity: Verbosity::All,
        ..base()
    };
    let a = run(config.clone()).unwrap();
    let b = run(config).unwrap();
    assert_eq!(a.dump(), b.dump());
    assert_eq!(a.event_log(), b.event_log());
    assert_eq!(
        ConsensusReport::from_trace(&a).unwrap(),
        ConsensusReport::from_trace(&b).unwrap()
    );
}

#[test]
fn negligible_latency_yields_linear_chain() {
    let trace = run(SimConfig {
        tau_block: 1e-4,
        tau_attestation: 1e-3,
        horizon: 60.0,
        n_nodes: 16,
        avg_degree: 4.0,
        verbosity: Verbosity::All,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    for (i, b) in trace.blocks.iter().enumerate().skip(1) {
        assert_eq!(b.parent, Some(i as u32 - 1), "block {i}");
    }
    assert_eq!(
        omniscient_head(&trace.blocks, &trace.attestations),
        Ok(trace.blocks.len() as u32 - 1)
    );
    // Every vote was cast early, for the slot's own block, so the threshold
    // handlers found nothing to do.
    for a in &trace.attestations {
        assert_eq!(trace.blocks[a.block as usize].slot, a.slot);
    }
    let threshold_times: Vec<f64> = trace
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Fixed(FixedEventKind::AttestationThreshold { .. })))
        .map(|e| e.time)
        .collect();
    for a in &trace.attestations {
        let issued_before = threshold_times[(a.slot - 1) as usize];
        assert!(issued_before > 0.0);
    }
    let report = ConsensusReport::from_trace(&trace).unwrap();
    assert_eq!(report.mainchain_rate, 1.0);
    assert_eq!(report.branching_ratio, 0.0);
}

#[test]
fn horizon_before_first_block_leaves_genesis() {
    // A horizon shorter than a slot is rejected; the shortest legal run has
    // one proposal.
    let trace = run(SimConfig {
        horizon: 12.0,
        ..base()
    })
    .unwrap();
    assert_eq!(trace.blocks.len(), 2);
    assert_eq!(omniscient_head(&trace.blocks[..1], &[]), Ok(GENESIS));
}

#[test]
fn fixed_events_run_on_schedule_and_in_order() {
    let trace = run(SimConfig {
        verbosity: Verbosity::All,
        tau_block: 2.0,
        ..base()
    })
    .unwrap();
    assert!(trace.events.windows(2).all(|w| w[0].time <= w[1].time));
    let fixed: Vec<_> = trace
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Fixed(k) => Some((e.time, k)),
            _ => None,
        })
        .collect();
    assert_eq!(fixed.len(), 75);
    for (i, chunk) in fixed.chunks(3).enumerate() {
        let start = i as f64 * 12.0;
        assert_eq!(chunk[0], (start, FixedEventKind::EpochBoundary { epoch: i as u64 }));
        assert_eq!(chunk[1], (start, FixedEventKind::SlotBoundary { slot: i as u64 + 1 }));
        assert_eq!(
            chunk[2],
            (start + 4.0, FixedEventKind::AttestationThreshold { slot: i as u64 + 1 })
        );
    }
    assert!(trace.events.iter().all(|e| e.time <= 300.0));
}

#[test]
fn proposer_selection_is_uniform() {
    // 10^4 slots over 8 validators, each count within 3 binomial sigmas.
    let slots = 10_000.0;
    let config = SimConfig {
        tau_block: f64::INFINITY,
        tau_attestation: f64::INFINITY,
        horizon: slots * 12.0 - 1.0,
        ..SimConfig::default()
    };
    let trace = Simulation::with_graph(config, PeerGraph::complete(8))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(trace.proposers.len(), 10_000);
    let mut counts = [0u64; 8];
    for &(_, p) in &trace.proposers {
        counts[p as usize] += 1;
    }
    let p = 1.0 / 8.0;
    let mean = slots * p;
    let sigma = (slots * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn stochastic_clock_is_exponential() {
    let graph = generate_er(16, 4.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for (tb, ta) in [(1.0, 1.0), (9.0, 1.0), (1.0, 9.0)] {
        let probe = Simulation::with_graph(SimConfig::default(), graph.clone()).unwrap();
        let rate = probe.rates().channels as f64 * (1.0 / tb + 1.0 / ta);
        let wanted = 100_000;
        let config = SimConfig {
            tau_block: tb,
            tau_attestation: ta,
            fixed_events: false,
            verbosity: Verbosity::All,
            horizon: 1.05 * wanted as f64 / rate,
            seed: 17,
            ..SimConfig::default()
        };
        let trace = Simulation::with_graph(config, graph.clone())
            .unwrap()
            .run()
            .unwrap();
        assert!(trace.events.len() > wanted);
        let mut last = 0.0;
        let mut gaps = Vec::with_capacity(wanted);
        let mut attestations = 0usize;
        for e in trace.events.iter().take(wanted) {
            gaps.push(e.time - last);
            last = e.time;
            match e.kind {
                EventKind::Gossip {
                    kind: StochasticKind::AttestationGossip,
                    ..
                } => attestations += 1,
                EventKind::Gossip { .. } => {}
                EventKind::Fixed(_) => panic!("fixed events are disabled"),
            }
        }
        let (d, p) = ks_exponential(&gaps, rate);
        assert!(p > 0.01, "KS D={d} p={p}");
        let expected = (1.0 / ta) / (1.0 / ta + 1.0 / tb);
        let frac = attestations as f64 / wanted as f64;
        assert!((frac - expected).abs() < 0.01, "{frac} vs {expected}");
    }
}

#[test]
fn gossip_channels_are_uniform() {
    let graph = generate_er(10, 3.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let config = SimConfig {
        fixed_events: false,
        verbosity: Verbosity::All,
        tau_block: 1.0,
        tau_attestation: 1.0,
        horizon: 100_000.0 / (2.0 * graph.channel_count() as f64),
        seed: 3,
        ..SimConfig::default()
    };
    let trace = Simulation::with_graph(config, graph.clone())
        .unwrap()
        .run()
        .unwrap();
    let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for &(a, b) in graph.edges() {
        counts.insert((a, b), 0);
        counts.insert((b, a), 0);
    }
    for e in &trace.events {
        if let EventKind::Gossip {
            sender, receiver, ..
        } = e.kind
        {
            *counts.get_mut(&(sender, receiver)).expect("existing channel") += 1;
        }
    }
    let counts: Vec<u64> = counts.into_values().collect();
    assert_eq!(counts.len(), graph.channel_count());
    let p = chi_square_uniform(&counts);
    assert!(p > 0.01, "chi-square p={p}");
}

#[test]
fn no_block_gossip_means_everyone_votes_locally() {
    let trace = run(SimConfig {
        tau_block: f64::INFINITY,
        tau_attestation: 0.5,
        ..base()
    })
    .unwrap();
    for a in &trace.attestations {
        let target = trace.blocks[a.block as usize];
        assert!(target.id == GENESIS || target.proposer == Some(a.validator));
    }
}
