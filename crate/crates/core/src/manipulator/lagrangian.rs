//! The attacker's augmented Lagrangian over the selected coordinates.
//!
//! `𝓛 = F(w′_g) − λ(d_j − d_T) − θ(δ̄ − δ_T) − (ρ_λ/2)φ(d_j − d_T) − (ρ_θ/2)φ(δ̄ − δ_T)`
//! where `w′_g = w_g + η·Δw′_g` and `Δw′_g` is the size-weighted mean of the
//! observed benign updates and the attacker's own candidate.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::fedsim::{Dataset, SurrogateModel};
use crate::mathcore::{cosine_with, dot, norm2, ZeroNormPolicy};

use super::dual::DualState;

/// Loss the attacker wants to raise, evaluated at full global parameters.
pub trait SurrogateObjective: Sync {
    fn loss_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Mean cross-entropy of the adapter model on the attacker's held-out data.
pub struct ModelSurrogate<'a> {
    pub model: &'a SurrogateModel,
    pub data: &'a Dataset,
}

impl SurrogateObjective for ModelSurrogate<'_> {
    fn loss_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.loss_grad_params(params, self.data)
    }
}

/// `F(w) = −½‖w − c‖²`, maximized at `c`; used to check the optimizer.
pub struct QuadraticSurrogate {
    pub center: Vec<f64>,
}

impl SurrogateObjective for QuadraticSurrogate {
    fn loss_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        ensure_len("quadratic surrogate", self.center.len(), params.len())?;
        let diff: Vec<f64> = params
            .iter()
            .zip(&self.center)
            .map(|(p, c)| p - c)
            .collect();
        Ok((-0.5 * dot(&diff, &diff), diff.iter().map(|d| -d).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `φ(x) = x²`, which also pulls slack constraints back to the boundary.
    #[default]
    Squared,
    /// `φ(x) = max(0, x)²`.
    Hinge,
}

impl PenaltyForm {
    fn value(self, x: f64) -> f64 {
        match self {
            PenaltyForm::Squared => x * x,
            PenaltyForm::Hinge => x.max(0.0).powi(2),
        }
    }

    fn slope(self, x: f64) -> f64 {
        match self {
            PenaltyForm::Squared => 2.0 * x,
            PenaltyForm::Hinge => 2.0 * x.max(0.0),
        }
    }
}

/// How similarities to the observed benign updates collapse into `δ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimilarityAggregate {
    /// Hard max for reports, `(1/τ)·log Σ exp(τ·δ_i)` inside `𝓛`.
    Max {
        temperature: f64,
    },
    Mean,
}

impl Default for SimilarityAggregate {
    fn default() -> Self {
        SimilarityAggregate::Max { temperature: 50.0 }
    }
}

/// What the attacker measures its distance against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistanceReference {
    /// The predicted aggregate that includes the candidate itself.
    PredictedGlobal,
    /// A fixed vector, e.g. the last realized global update.
    Fixed(Vec<f64>),
}

/// Everything one attacker knows in one round.
pub struct AttackProblem<'a> {
    pub global: &'a [f64],
    pub server_lr: f64,
    /// Observed benign updates and their claimed sizes.
    pub observed: Vec<(&'a [f64], f64)>,
    pub own_size: f64,
    /// Coordinates the attacker optimizes; everything else is `fill`.
    pub selected: &'a [usize],
    pub fill: &'a [f64],
    pub reference: DistanceReference,
    pub similarity: SimilarityAggregate,
    pub penalty: PenaltyForm,
    pub surrogate: &'a dyn SurrogateObjective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianEval {
    pub value: f64,
    /// Gradient with respect to the selected coordinates.
    pub grad: Vec<f64>,
    pub loss: f64,
    pub distance: f64,
    /// `δ̄` as used inside `𝓛` (smooth for the max aggregate).
    pub similarity: f64,
    /// `δ̄` with a hard max; equals `similarity` for the mean aggregate.
    pub similarity_hard: f64,
}

impl AttackProblem<'_> {
    pub fn dim(&self) -> usize {
        self.selected.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.global.len();
        ensure_len("attack problem (fill)", n, self.fill.len())?;
        if self.observed.is_empty() {
            return Err(Error::Empty {
                context: "attack problem (no observed updates)",
            });
        }
        for (u, size) in &self.observed {
            ensure_len("attack problem (observed)", n, u.len())?;
            if *size <= 0.0 {
                return Err(Error::invalid("observed claimed sizes must be positive"));
            }
        }
        if self.own_size <= 0.0 {
            return Err(Error::invalid("attacker claimed size must be positive"));
        }
        if let Some(&bad) = self.selected.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "selected coordinate {bad} out of range {n}"
            )));
        }
        if let DistanceReference::Fixed(r) = &self.reference {
            ensure_len("attack problem (reference)", n, r.len())?;
        }
        Ok(())
    }

    /// The full-length update with `x` written into the selected coordinates.
    pub fn compose(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("compose", self.selected.len(), x.len())?;
        let mut v = self.fill.to_vec();
        for (&i, &xi) in self.selected.iter().zip(x) {
            v[i] = xi;
        }
        Ok(v)
    }

    /// Attacker's aggregation weight `a_j`.
    pub fn own_weight(&self) -> f64 {
        self.own_size / (self.own_size + self.observed.iter().map(|(_, s)| s).sum::<f64>())
    }

    /// Size-weighted mean of the observed updates and `v`.
    pub fn predict_global(&self, v: &[f64]) -> Vec<f64> {
        let total = self.own_size + self.observed.iter().map(|(_, s)| s).sum::<f64>();
        let mut out: Vec<f64> = v.iter().map(|x| x * self.own_size / total).collect();
        for (u, s) in &self.observed {
            let w = s / total;
            for (o, x) in out.iter_mut().zip(u.iter()) {
                *o += w * x;
            }
        }
        out
    }

    /// Distance of `v` to the reference and its gradient in full coordinates.
    fn distance_and_grad(&self, v: &[f64], predicted: &[f64]) -> (f64, Vec<f64>) {
        let (reference, chain) = match &self.reference {
            DistanceReference::PredictedGlobal => (predicted, 1.0 - self.own_weight()),
            DistanceReference::Fixed(r) => (r.as_slice(), 1.0),
        };
        let u: Vec<f64> = v.iter().zip(reference).map(|(a, b)| a - b).collect();
        let d = norm2(&u);
        let g = if d > 0.0 {
            u.iter().map(|x| chain * x / d).collect()
        } else {
            vec![0.0; u.len()]
        };
        (d, g)
    }

    /// `(δ̄ used in 𝓛, hard δ̄, ∂δ̄/∂v)`.
    fn similarity_and_grad(&self, v: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let nv = norm2(v);
        let mut sims = Vec::with_capacity(self.observed.len());
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.observed.len());
        for (w, _) in &self.observed {
            let s = cosine_with(v, w, ZeroNormPolicy::Zero)?;
            let nw = norm2(w);
            let g = if s.degenerate || nv == 0.0 || nw == 0.0 {
                vec![0.0; v.len()]
            } else {
                v.iter()
                    .zip(w.iter())
                    .map(|(vi, wi)| wi / (nv * nw) - s.value * vi / (nv * nv))
                    .collect()
            };
            sims.push(s.value);
            grads.push(g);
        }
        let hard = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = sims.len() as f64;
        let weights: Vec<f64> = match self.similarity {
            SimilarityAggregate::Mean => vec![1.0 / n; sims.len()],
            SimilarityAggregate::Max { temperature } => {
                let e: Vec<f64> = sims
                    .iter()
                    .map(|s| (temperature * (s - hard)).exp())
                    .collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|x| x / z).collect()
            }
        };
        let value = match self.similarity {
            SimilarityAggregate::Mean => sims.iter().sum::<f64>() / n,
            SimilarityAggregate::Max { temperature } => {
                let z: f64 = sims.iter().map(|s| (temperature * (s - hard)).exp()).sum();
                hard + z.ln() / temperature
            }
        };
        let reported = match self.similarity {
            SimilarityAggregate::Mean => value,
            SimilarityAggregate::Max { .. } => hard,
        };
        let mut g = vec![0.0; v.len()];
        for (w, gi) in weights.iter().zip(&grads) {
            for (o, x) in g.iter_mut().zip(gi) {
                *o += w * x;
            }
        }
        Ok((value, reported, g))
    }

    /// Stealth metrics of a full-length candidate without touching the surrogate.
    pub fn stealth_metrics(&self, v: &[f64]) -> Result<(f64, f64)> {
        let predicted = self.predict_global(v);
        let (d, _) = self.distance_and_grad(v, &predicted);
        let (_, hard, _) = self.similarity_and_grad(v)?;
        Ok((d, hard))
    }

    pub fn evaluate(&self, x: &[f64], dual: &DualState) -> Result<LagrangianEval> {
        let v = self.compose(x)?;
        let predicted = self.predict_global(&v);
        let params: Vec<f64> = self
            .global
            .iter()
            .zip(&predicted)
            .map(|(w, d)| w + self.server_lr * d)
            .collect();
        let (loss, loss_grad) = self.surrogate.loss_grad(&params)?;
        ensure_len("surrogate gradient", params.len(), loss_grad.len())?;
        let (d, dgrad) = self.distance_and_grad(&v, &predicted);
        let (sim, sim_hard, sgrad) = self.similarity_and_grad(&v)?;

        let th = dual.thresholds;
        let gd = d - th.distance;
        let gs = sim - th.similarity;
        let mut value = loss;
        let mut cd = 0.0;
        let mut cs = 0.0;
        // An open threshold (∞) leaves its constraint inactive.
        if gd.is_finite() {
            value -= dual.lambda * gd + 0.5 * dual.rho_lambda * self.penalty.value(gd);
            cd = dual.lambda + 0.5 * dual.rho_lambda * self.penalty.slope(gd);
        }
        if gs.is_finite() {
            value -= dual.theta * gs + 0.5 * dual.rho_theta * self.penalty.value(gs);
            cs = dual.theta + 0.5 * dual.rho_theta * self.penalty.slope(gs);
        }
        let chain = self.server_lr * self.own_weight();
        let grad = self
            .selected
            .iter()
            .map(|&i| chain * loss_grad[i] - cd * dgrad[i] - cs * sgrad[i])
            .collect();
        Ok(LagrangianEval {
            value,
            grad,
            loss,
            distance: d,
            similarity: sim,
            similarity_hard: sim_hard,
        })
    }
}
