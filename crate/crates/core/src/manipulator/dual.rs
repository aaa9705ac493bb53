//! Multipliers for the two stealth constraints and their projected updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::thresholds::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub growth: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub theta: f64,
    pub rho_lambda: f64,
    pub rho_theta: f64,
    /// Dual step `ε`.
    pub step: f64,
    pub thresholds: Thresholds,
    pub round: usize,
    /// When set, multipliers never move (penalty-free ablation).
    pub frozen: bool,
    pub schedule: Option<PenaltySchedule>,
    last_violation: (f64, f64),
}

impl DualState {
    pub fn new(rho_lambda: f64, rho_theta: f64, step: f64) -> Result<Self> {
        if !(rho_lambda >= 0.0
            && rho_theta >= 0.0
            && rho_lambda.is_finite()
            && rho_theta.is_finite())
        {
            return Err(Error::invalid(
                "penalty weights must be finite and nonnegative",
            ));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("dual step {step} must be positive")));
        }
        Ok(Self {
            lambda: 0.0,
            theta: 0.0,
            rho_lambda,
            rho_theta,
            step,
            thresholds: Thresholds::OPEN,
            round: 0,
            frozen: false,
            schedule: None,
            last_violation: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        })
    }

    /// Multipliers pinned at zero and no quadratic penalty.
    pub fn penalty_free(step: f64) -> Result<Self> {
        let mut s = Self::new(0.0, 0.0, step)?;
        s.frozen = true;
        Ok(s)
    }
}

/// `λ′ = [λ + ε(d_j − d_T)]⁺`, `θ′ = [θ + ε(δ̄ − δ_T)]⁺`.
///
/// With a schedule, each `ρ` grows by `growth` (capped at `rho_max`) when its
/// violation is positive and larger than at the previous update.
pub fn dual_update(dual: &DualState, d_j: f64, sim: f64) -> DualState {
    let mut next = *dual;
    next.round = dual.round + 1;
    if dual.frozen {
        return next;
    }
    let vd = d_j - dual.thresholds.distance;
    let vs = sim - dual.thresholds.similarity;
    next.lambda = project(dual.lambda + dual.step * vd);
    next.theta = project(dual.theta + dual.step * vs);
    if let Some(s) = dual.schedule {
        if vd > 0.0 && vd > dual.last_violation.0 {
            next.rho_lambda = (dual.rho_lambda * s.growth).min(s.rho_max);
        }
        if vs > 0.0 && vs > dual.last_violation.1 {
            next.rho_theta = (dual.rho_theta * s.growth).min(s.rho_max);
        }
    }
    next.last_violation = (vd, vs);
    next
}

fn project(x: f64) -> f64 {
    // NaN (from an infinite threshold) leaves the multiplier at zero.
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
