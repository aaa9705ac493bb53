//! Stealth thresholds shared by the server filters and the attacker.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::mathcore::{cosine, euclid, percentile_nearest_rank};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Distance bound `d_T`.
    pub distance: f64,
    /// Similarity bound `δ_T`.
    pub similarity: f64,
}

impl Thresholds {
    /// No filtering at all.
    pub const OPEN: Thresholds = Thresholds {
        distance: f64::INFINITY,
        similarity: f64::INFINITY,
    };

    pub fn is_open(&self) -> bool {
        !self.distance.is_finite() && !self.similarity.is_finite()
    }
}

/// Distances of each update to `reference`.
pub fn distances_to(updates: &[&[f64]], reference: &[f64]) -> Result<Vec<f64>> {
    updates.iter().map(|u| euclid(u, reference)).collect()
}

/// Cosine similarity of every unordered pair, in `(i, j)` order with `i < j`.
pub fn pairwise_similarities(updates: &[&[f64]]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(updates.len() * updates.len().saturating_sub(1) / 2);
    for i in 0..updates.len() {
        for j in (i + 1)..updates.len() {
            out.push(cosine(updates[i], updates[j])?);
        }
    }
    Ok(out)
}

/// `d_T = (1+κ)·max_i ‖Δw_i − ref‖` and `δ_T` = the `q`-th nearest-rank
/// percentile of benign pairwise similarities.
pub fn estimate_thresholds(
    benign: &[&[f64]],
    reference: &[f64],
    kappa: f64,
    q: f64,
) -> Result<Thresholds> {
    if benign.len() < 2 {
        return Err(Error::invalid(format!(
            "threshold estimation needs at least two benign updates, got {}",
            benign.len()
        )));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!(
            "margin κ = {kappa} must be finite and nonnegative"
        )));
    }
    for u in benign {
        ensure_len("estimate_thresholds", reference.len(), u.len())?;
    }
    let dmax = distances_to(benign, reference)?
        .into_iter()
        .fold(0.0, f64::max);
    let sims = pairwise_similarities(benign)?;
    Ok(Thresholds {
        distance: (1.0 + kappa) * dmax,
        similarity: percentile_nearest_rank(&sims, q)?,
    })
}
