//! Reference attacks built from the same benign observations as the main
//! attack: a bounded mean shift (ALIE) and Gaussian random poisoning (RMP).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_len, Error, Result};
use crate::fedsim::UpdateVector;
use crate::mathcore::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignStats {
    pub mean: Vec<f64>,
    /// Population standard deviation per coordinate.
    pub std: Vec<f64>,
    pub count: usize,
}

impl BenignStats {
    pub fn from_updates(updates: &[UpdateVector]) -> Result<Self> {
        if updates.len() < 2 {
            return Err(Error::invalid(format!(
                "benign statistics need at least two updates, got {}",
                updates.len()
            )));
        }
        let len = updates[0].len();
        for u in updates {
            ensure_len("benign statistics", len, u.len())?;
        }
        let n = updates.len() as f64;
        let mut mean = vec![0.0; len];
        for u in updates {
            for (m, v) in mean.iter_mut().zip(&u.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; len];
        for u in updates {
            for ((s, v), m) in var.iter_mut().zip(&u.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self {
            mean,
            std,
            count: updates.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    /// `μ − sign(μ)·zσ`
    #[default]
    AgainstMean,
    /// `μ + sign(μ)·zσ`
    WithMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ZPolicy {
    Fixed {
        z: f64,
    },
    /// The standard-normal quantile of `(n − m − s)/(n − m)` with
    /// `s = ⌊n/2 + 1⌋ − m`, for `n` agents of which `m` are malicious.
    Quantile,
}

impl Default for ZPolicy {
    fn default() -> Self {
        ZPolicy::Fixed { z: 1.0 }
    }
}

/// Resolves the shift multiplier for `agents` total participants of which
/// `malicious` are adversarial.
pub fn resolve_z(policy: ZPolicy, agents: usize, malicious: usize) -> Result<f64> {
    match policy {
        ZPolicy::Fixed { z } => {
            if !(z >= 0.0 && z.is_finite()) {
                return Err(Error::invalid(format!(
                    "ALIE z = {z} must be finite and nonnegative"
                )));
            }
            Ok(z)
        }
        ZPolicy::Quantile => {
            let n = agents as f64;
            let m = malicious as f64;
            if malicious >= agents {
                return Err(Error::invalid(
                    "the quantile rule needs more agents than adversaries",
                ));
            }
            let s = (n / 2.0 + 1.0).floor() - m;
            let p = (n - m - s) / (n - m);
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!(
                    "the quantile rule is undefined for n = {agents}, m = {malicious} (p = {p})"
                )));
            }
            let normal = Normal::standard();
            Ok(normal.inverse_cdf(p).max(0.0))
        }
    }
}

pub fn alie_update(stats: &BenignStats, z: f64, direction: ShiftDirection) -> Result<Vec<f64>> {
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::invalid(format!(
            "ALIE z = {z} must be finite and nonnegative"
        )));
    }
    let sign = match direction {
        ShiftDirection::AgainstMean => -1.0,
        ShiftDirection::WithMean => 1.0,
    };
    Ok(stats
        .mean
        .iter()
        .zip(&stats.std)
        .map(|(&m, &s)| {
            let dir = if m > 0.0 {
                1.0
            } else if m < 0.0 {
                -1.0
            } else {
                0.0
            };
            m + sign * dir * z * s
        })
        .collect())
}

pub fn rmp_update(stats: &BenignStats, scale: f64, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!(
            "RMP scale {scale} must be positive"
        )));
    }
    Ok(stats
        .mean
        .iter()
        .zip(&stats.std)
        .map(|(&m, &s)| m + scale * s * rng.normal())
        .collect())
}
