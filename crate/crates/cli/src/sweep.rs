// SPDX-License-Identifier: Apache-2.0

//! Parameter sweeps over seed-indexed realisations.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use gasper_abm::{run, ConsensusReport, SimConfig};
use rayon::prelude::*;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const REALISATION_COLUMNS: &[&str] = &[
    "seed",
    "n",
    "avg_degree",
    "tau_block",
    "tau_attestation",
    "slot_duration",
    "horizon",
    "total_blocks",
    "mainchain_blocks",
    "mu",
    "F",
    "diameter",
    "predicted_diameter",
    "threshold_margin",
];

pub const AGGREGATE_COLUMNS: &[&str] = &[
    "point",
    "tau_block",
    "tau_attestation",
    "realisations",
    "failures",
    "mu_mean",
    "mu_sd",
    "F_mean",
    "F_sd",
    "threshold_margin_mean",
    "predicted_threshold_margin",
];

/// Marks the start of the aggregate section in sweep CSV output.
pub const AGGREGATE_MARKER: &str = "# aggregate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    TauBlock,
    TauAttestation,
}

impl SweepParam {
    /// The other latency, varied along the secondary axis.
    pub fn secondary(self) -> Self {
        match self {
            Self::TauBlock => Self::TauAttestation,
            Self::TauAttestation => Self::TauBlock,
        }
    }

    pub fn apply(self, config: &mut SimConfig, value: f64) {
        match self {
            Self::TauBlock => config.tau_block = value,
            Self::TauAttestation => config.tau_attestation = value,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TauBlock => "tau_block",
            Self::TauAttestation => "tau_attestation",
        })
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "tau_block" | "tau-block" => Ok(Self::TauBlock),
            "tau_attestation" | "tau-attestation" => Ok(Self::TauAttestation),
            other => Err(format!(
                "unknown sweep parameter {other:?} (tau_block or tau_attestation)"
            )),
        }
    }
}

/// Grid of swept values: an explicit list or an evenly spaced range.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        points: usize,
        log: bool,
    },
}

impl Default for Grid {
    fn default() -> Self {
        Self::Range {
            min: 0.1,
            max: 900.0,
            points: 25,
            log: true,
        }
    }
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Self::List(ref v) => v.clone(),
            Self::Range { min, points: 1, .. } => vec![min],
            Self::Range {
                min,
                max,
                points,
                log,
            } => (0..points)
                .map(|i| {
                    let frac = i as f64 / (points - 1) as f64;
                    if i == 0 {
                        min
                    } else if i == points - 1 {
                        max
                    } else if log {
                        (min.ln() + frac * (max.ln() - min.ln())).exp()
                    } else {
                        min + frac * (max - min)
                    }
                })
                .collect(),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::List(v) => {
                let parts: Vec<String> = v.iter().map(f64::to_string).collect();
                f.write_str(&parts.join(","))
            }
            Self::Range {
                min,
                max,
                points,
                log,
            } => write!(
                f,
                "{min}:{max}:{points}:{}",
                if *log { "log" } else { "lin" }
            ),
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    /// `min:max:points[:log|:lin]` or `v1,v2,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if !s.contains(':') {
            return s
                .parse::<crate::config::ValueList>()
                .map(|v| Self::List(v.0));
        }
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected min:max:points[:log|lin], got {s:?}"));
        }
        let num = |p: &str| p.parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}"));
        let min = num(parts[0])?;
        let max = num(parts[1])?;
        let points = parts[2]
            .parse::<usize>()
            .map_err(|e| format!("bad point count {:?}: {e}", parts[2]))?;
        let log = match parts.get(3).copied() {
            None | Some("log") => true,
            Some("lin") => false,
            Some(other) => return Err(format!("grid spacing must be log or lin, got {other:?}")),
        };
        if points == 0 || !(min <= max) {
            return Err(format!("empty grid {s:?}"));
        }
        Ok(Self::Range {
            min,
            max,
            points,
            log,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub param: SweepParam,
    pub grid: Grid,
    /// Values of the other latency, one full grid pass per value.
    pub secondary: Vec<f64>,
    pub realisations: usize,
    pub master_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            param: SweepParam::TauBlock,
            grid: Grid::default(),
            secondary: vec![0.1, 1.0, 10.0, 100.0, 900.0],
            realisations: 20,
            master_seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let values = self.grid.values();
        let bad = values
            .iter()
            .chain(&self.secondary)
            .find(|v| !(**v > 0.0 && v.is_finite()));
        if let Some(v) = bad {
            return Err(CliError::Spec(format!("grid value {v} outside (0, inf)")));
        }
        if values.is_empty() || self.secondary.is_empty() {
            return Err(CliError::Spec("empty grid".into()));
        }
        if self.realisations == 0 {
            return Err(CliError::Spec("realisations must be at least 1".into()));
        }
        Ok(())
    }

    /// `(tau_block, tau_attestation)` per point; the grid varies fastest.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let grid = self.grid.values();
        let mut out = Vec::with_capacity(grid.len() * self.secondary.len());
        for &s in &self.secondary {
            for &g in &grid {
                let mut c = self.base.clone();
                self.param.apply(&mut c, g);
                self.param.secondary().apply(&mut c, s);
                out.push((c.tau_block, c.tau_attestation));
            }
        }
        out
    }

    pub fn config_for(&self, point: usize, realisation: usize) -> SimConfig {
        self.config_at(self.points()[point], point, realisation)
    }

    fn config_at(&self, (tau_block, tau_attestation): (f64, f64), point: usize, realisation: usize) -> SimConfig {
        SimConfig {
            tau_block,
            tau_attestation,
            seed: derive_seed(self.master_seed, point as u64, realisation as u64),
            ..self.base.clone()
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Realisation seed: `s(s(s(master) ^ point) ^ realisation)` with `s` the
/// SplitMix64 finalizer.
pub fn derive_seed(master: u64, point: u64, realisation: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ point) ^ realisation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealisationRow {
    pub point: usize,
    pub realisation: usize,
    pub config: SimConfig,
    pub outcome: Result<ConsensusReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub point: usize,
    pub tau_block: f64,
    pub tau_attestation: f64,
    pub realisations: usize,
    pub failures: usize,
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub f_mean: f64,
    pub f_sd: f64,
    pub threshold_margin_mean: f64,
    pub predicted_threshold_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResults {
    pub spec: SweepSpec,
    pub rows: Vec<RealisationRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResults {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_realisation(config: SimConfig) -> Result<ConsensusReport, String> {
    let trace = run(config).map_err(|e| e.to_string())?;
    ConsensusReport::from_trace(&trace).map_err(|e| e.to_string())
}

/// Runs every `(point, realisation)` pair, in parallel, and returns them
/// ordered by point then realisation. Failures are kept per row.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResults, CliError> {
    spec.validate()?;
    let points = spec.points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.realisations).map(move |r| (p, r)))
        .collect();
    let rows: Vec<RealisationRow> = jobs
        .par_iter()
        .map(|&(point, realisation)| {
            let config = spec.config_at(points[point], point, realisation);
            RealisationRow {
                point,
                realisation,
                outcome: run_realisation(config.clone()),
                config,
            }
        })
        .collect();

    let aggregates = points
        .iter()
        .enumerate()
        .map(|(point, &(tau_block, tau_attestation))| {
            let reports: Vec<&ConsensusReport> = rows
                .iter()
                .filter(|r| r.point == point)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let mus: Vec<f64> = reports.iter().map(|r| r.mainchain_rate).collect();
            let fs: Vec<f64> = reports.iter().map(|r| r.branching_ratio).collect();
            let margins: Vec<f64> = reports.iter().map(|r| r.threshold_margin).collect();
            let (mu_mean, mu_sd) = mean_sd(&mus);
            let (f_mean, f_sd) = mean_sd(&fs);
            AggregateRow {
                point,
                tau_block,
                tau_attestation,
                realisations: reports.len(),
                failures: spec.realisations - reports.len(),
                mu_mean,
                mu_sd,
                f_mean,
                f_sd,
                threshold_margin_mean: mean_sd(&margins).0,
                predicted_threshold_margin: reports
                    .first()
                    .and_then(|r| r.predicted_threshold_margin),
            }
        })
        .collect();

    Ok(SweepResults {
        spec: spec.clone(),
        rows,
        aggregates,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// CSV text: schema header comments, realisation rows, failed rows as
/// comments, then the aggregate section.
pub fn to_csv(results: &SweepResults) -> String {
    let spec = &results.spec;
    let secondary: Vec<String> = spec.secondary.iter().map(f64::to_string).collect();
    let mut out = String::new();
    let _ = writeln!(out, "# gasper-abm sweep schema={SCHEMA_VERSION}");
    let _ = writeln!(
        out,
        "# sweep_param={} grid={} secondary={} realisations={} master_seed={}",
        spec.param,
        spec.grid,
        secondary.join(","),
        spec.realisations,
        spec.master_seed
    );
    let _ = writeln!(out, "{}", REALISATION_COLUMNS.join(","));
    for row in &results.rows {
        let c = &row.config;
        match &row.outcome {
            Ok(r) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    c.seed,
                    c.n_nodes,
                    c.avg_degree,
                    c.tau_block,
                    c.tau_attestation,
                    c.slot_duration,
                    c.horizon,
                    r.total_blocks,
                    r.mainchain_blocks,
                    r.mainchain_rate,
                    r.branching_ratio,
                    r.observed_diameter,
                    opt(r.predicted_diameter),
                    r.threshold_margin
                );
            }
            Err(e) => {
                let _ = writeln!(
                    out,
                    "# failed point={} realisation={} seed={}: {}",
                    row.point,
                    row.realisation,
                    c.seed,
                    e.replace('\n', " ")
                );
            }
        }
    }
    let _ = writeln!(out, "{AGGREGATE_MARKER}");
    let _ = writeln!(out, "{}", AGGREGATE_COLUMNS.join(","));
    for a in &results.aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.point,
            a.tau_block,
            a.tau_attestation,
            a.realisations,
            a.failures,
            a.mu_mean,
            a.mu_sd,
            a.f_mean,
            a.f_sd,
            a.threshold_margin_mean,
            opt(a.predicted_threshold_margin)
        );
    }
    out
}
