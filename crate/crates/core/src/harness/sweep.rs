//! One run per value of a single field, sharing the base seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::metrics::write_outputs;
use super::run::run_experiment;

/// Sweep axis names and the config keys they set.
pub const SWEEP_AXES: &[(&str, &str)] = &[
    ("rank", "model.rank"),
    ("alpha", "model.alpha"),
    ("adversaries", "adversaries"),
    ("visibility", "augmp.visibility"),
    ("attack", "attack"),
];

pub fn axis_key(axis: &str) -> Result<&'static str> {
    SWEEP_AXES
        .iter()
        .find(|(name, key)| *name == axis || *key == axis)
        .map(|(_, key)| *key)
        .ok_or_else(|| {
            let names: Vec<&str> = SWEEP_AXES.iter().map(|a| a.0).collect();
            Error::Config(format!(
                "`{axis}` is not sweepable (expected one of {})",
                names.join(", ")
            ))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    /// Relative to the sweep directory.
    pub dir: String,
    pub final_accuracy: f64,
    pub final_local_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub axis: String,
    pub key: String,
    pub seed: u64,
    pub runs: Vec<SweepEntry>,
}

/// Builds every config before running any, so a bad value fails fast.
pub fn sweep_configs(
    base: &ExperimentConfig,
    axis: &str,
    values: &[String],
) -> Result<Vec<ExperimentConfig>> {
    let key = axis_key(axis)?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|v| base.with_override(&format!("{key}={v}")))
        .collect()
}

/// Writes `<out>/<axis>_<value>/` per value and `<out>/index.json`.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[String],
    out: &Path,
) -> Result<SweepIndex> {
    let key = axis_key(axis)?;
    let name = SWEEP_AXES.iter().find(|a| a.1 == key).map_or(axis, |a| a.0);
    let configs = sweep_configs(base, axis, values)?;
    fs::create_dir_all(out)?;
    let mut runs = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let dir = format!("{name}_{value}");
        let outcome = run_experiment(cfg)?;
        let summary = write_outputs(&outcome, &out.join(&dir))?;
        runs.push(SweepEntry {
            value: value.clone(),
            dir,
            final_accuracy: summary.final_accuracy,
            final_local_accuracy: summary.final_local_accuracy,
        });
    }
    let index = SweepIndex {
        axis: name.to_string(),
        key: key.to_string(),
        seed: base.seed,
        runs,
    };
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out.join("index.json"), text + "\n")?;
    Ok(index)
}
