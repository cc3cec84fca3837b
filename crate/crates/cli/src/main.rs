// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gasper_abm::engine::{Simulation, Verbosity};
use gasper_abm::{ConsensusReport, SimConfig};
use gasper_abm_cli::config::{sim_config_from, sweep_spec_from, KeyValues, ValueList};
use gasper_abm_cli::summary::summarize;
use gasper_abm_cli::sweep::{run_sweep, to_csv, Grid, SweepParam, SweepSpec};
use gasper_abm_cli::CliError;

#[derive(Parser)]
#[command(name = "gasper-abm", version, about = "Agent-based LMD GHOST consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single realisation and print its consensus report.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Write the blocktree dump and attestation log here.
        #[arg(long, value_name = "PATH")]
        dump_tree: Option<PathBuf>,
        /// Write the peer graph as an edge list here.
        #[arg(long, value_name = "PATH")]
        dump_graph: Option<PathBuf>,
        /// Write the full event log here.
        #[arg(long, value_name = "PATH")]
        dump_events: Option<PathBuf>,
    },
    /// Run a parameter sweep and write CSV.
    Sweep {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        realisations: Option<usize>,
        /// tau_block or tau_attestation.
        #[arg(long)]
        sweep_param: Option<SweepParam>,
        /// `min:max:points[:log|lin]` or a comma-separated list.
        #[arg(long)]
        grid: Option<Grid>,
        /// Comma-separated values for the other latency.
        #[arg(long)]
        secondary: Option<ValueList>,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Summarize a sweep CSV.
    Summarize {
        csv: PathBuf,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    degree: Option<f64>,
    #[arg(long)]
    tau_block: Option<f64>,
    #[arg(long)]
    tau_attestation: Option<f64>,
    /// Slot duration in seconds.
    #[arg(long)]
    slot: Option<f64>,
    /// Attestation deadline offset into the slot, in seconds.
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    epoch_slots: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
}

impl SimArgs {
    fn key_values(&self) -> Result<KeyValues, CliError> {
        match &self.config {
            Some(path) => KeyValues::parse(&read(path)?),
            None => Ok(KeyValues::default()),
        }
    }

    fn apply(&self, c: &mut SimConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.nodes {
            c.n_nodes = v;
        }
        if let Some(v) = self.degree {
            c.avg_degree = v;
        }
        if let Some(v) = self.tau_block {
            c.tau_block = v;
        }
        if let Some(v) = self.tau_attestation {
            c.tau_attestation = v;
        }
        if let Some(v) = self.slot {
            c.slot_duration = v;
        }
        if let Some(v) = self.offset {
            c.attestation_offset = v;
        }
        if let Some(v) = self.epoch_slots {
            c.slots_per_epoch = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn print_report(config: &SimConfig, r: &ConsensusReport) {
    println!(
        "nodes={} degree={} tau_block={} tau_attestation={} seed={}",
        config.n_nodes, config.avg_degree, config.tau_block, config.tau_attestation, config.seed
    );
    println!("blocks          {}", r.total_blocks);
    println!("mainchain       {}", r.mainchain_blocks);
    println!("orphaned        {}", r.orphaned);
    println!("mainchain rate  {:.6}", r.mainchain_rate);
    println!("branching ratio {:.6}", r.branching_ratio);
    println!("diameter        {}", r.observed_diameter);
    match r.predicted_diameter {
        Some(d) => println!("ER diameter     {d:.4}"),
        None => println!("ER diameter     n/a"),
    }
    let regime = |m: f64| if m > 0.0 { "breakdown" } else { "consensus" };
    println!(
        "margin          {:+.4} ({})",
        r.threshold_margin,
        regime(r.threshold_margin)
    );
    if let Some(m) = r.predicted_threshold_margin {
        println!("ER margin       {m:+.4} ({})", regime(m));
    }
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run {
            sim,
            dump_tree,
            dump_graph,
            dump_events,
        } => {
            let mut config = sim_config_from(&sim.key_values()?)?;
            sim.apply(&mut config);
            if dump_events.is_some() {
                config.verbosity = Verbosity::All;
            }
            let trace = Simulation::new(config.clone())?.run()?;
            let report = ConsensusReport::from_trace(&trace)?;
            print_report(&config, &report);
            if let Some(path) = dump_tree {
                write(&path, &trace.dump())?;
            }
            if let Some(path) = dump_graph {
                write(&path, &trace.graph.to_edge_list())?;
            }
            if let Some(path) = dump_events {
                write(&path, &trace.event_log())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            sim,
            realisations,
            sweep_param,
            grid,
            secondary,
            out,
        } => {
            let (mut spec, config_out): (SweepSpec, _) = sweep_spec_from(&sim.key_values()?)?;
            sim.apply(&mut spec.base);
            spec.master_seed = spec.base.seed;
            if let Some(r) = realisations {
                spec.realisations = r;
            }
            if let Some(p) = sweep_param {
                spec.param = p;
            }
            if let Some(g) = grid {
                spec.grid = g;
            }
            if let Some(s) = secondary {
                spec.secondary = s.0;
            }
            let results = run_sweep(&spec)?;
            let csv = to_csv(&results);
            match out.or(config_out.map(PathBuf::from)) {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
            let failures = results.failures();
            eprintln!(
                "{} realisations over {} points, {} failed",
                results.rows.len(),
                results.aggregates.len(),
                failures
            );
            Ok(if failures > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Summarize { csv } => {
            print!("{}", summarize(&read(&csv)?)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
