// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value` configuration files and sweep grid syntax.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use gasper_abm::SimConfig;

use crate::sweep::{Grid, SweepParam, SweepSpec};
use crate::CliError;

/// Parsed `key = value` pairs. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config {
                    line: idx + 1,
                    msg: format!("expected 'key = value', got {line:?}"),
                });
            };
            entries.insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|e| CliError::Config {
                line: *line,
                msg: format!("{key}: {e}"),
            }),
        }
    }

    fn check_known(&self, known: &[&str]) -> Result<(), CliError> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((key, (line, _))) => Err(CliError::Config {
                line: *line,
                msg: format!("unknown key {key:?}"),
            }),
            None => Ok(()),
        }
    }
}

pub const SIM_KEYS: &[&str] = &[
    "n_nodes",
    "avg_degree",
    "tau_block",
    "tau_attestation",
    "slot_duration",
    "attestation_offset",
    "slots_per_epoch",
    "horizon",
    "seed",
];

pub const SWEEP_KEYS: &[&str] = &["sweep_param", "grid", "secondary", "realisations", "out"];

/// Applies the simulation keys present in `kv` on top of `base`.
pub fn apply_sim_keys(kv: &KeyValues, base: &mut SimConfig) -> Result<(), CliError> {
    if let Some(v) = kv.get("n_nodes")? {
        base.n_nodes = v;
    }
    if let Some(v) = kv.get("avg_degree")? {
        base.avg_degree = v;
    }
    if let Some(v) = kv.get("tau_block")? {
        base.tau_block = v;
    }
    if let Some(v) = kv.get("tau_attestation")? {
        base.tau_attestation = v;
    }
    if let Some(v) = kv.get("slot_duration")? {
        base.slot_duration = v;
    }
    if let Some(v) = kv.get("attestation_offset")? {
        base.attestation_offset = v;
    }
    if let Some(v) = kv.get("slots_per_epoch")? {
        base.slots_per_epoch = v;
    }
    if let Some(v) = kv.get("horizon")? {
        base.horizon = v;
    }
    if let Some(v) = kv.get("seed")? {
        base.seed = v;
    }
    Ok(())
}

pub fn sim_config_from(kv: &KeyValues) -> Result<SimConfig, CliError> {
    kv.check_known(SIM_KEYS)?;
    let mut config = SimConfig::default();
    apply_sim_keys(kv, &mut config)?;
    Ok(config)
}

/// Sweep settings from a config file; also returns the `out` key if set.
pub fn sweep_spec_from(kv: &KeyValues) -> Result<(SweepSpec, Option<String>), CliError> {
    let known: Vec<&str> = SIM_KEYS.iter().chain(SWEEP_KEYS).copied().collect();
    kv.check_known(&known)?;
    let mut spec = SweepSpec::default();
    apply_sim_keys(kv, &mut spec.base)?;
    spec.master_seed = spec.base.seed;
    if let Some(p) = kv.get::<SweepParam>("sweep_param")? {
        spec.param = p;
    }
    if let Some(g) = kv.get::<Grid>("grid")? {
        spec.grid = g;
    }
    if let Some(s) = kv.get::<ValueList>("secondary")? {
        spec.secondary = s.0;
    }
    if let Some(r) = kv.get("realisations")? {
        spec.realisations = r;
    }
    Ok((spec, kv.get("out")?))
}

/// Comma-separated list of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueList(pub Vec<f64>);

impl FromStr for ValueList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad value {v:?}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ValueList)
    }
}
