//! Benign local fine-tuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, SeededRng};

use super::data::Dataset;
use super::model::{lora_loss_grad, LoraFactors, SurrogateModel};
use super::server::{GlobalState, UpdateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub update: UpdateVector,
    /// Full-batch loss before each epoch, then the final loss.
    pub losses: Vec<f64>,
}

/// Trains fresh adapter factors on top of the broadcast global parameters with
/// full-batch gradient descent and returns `Δw_i(t) = w_i(t) − w_g(t−1)`,
/// which is the flattened `s·B·A`.
///
/// `init_rng` draws the adapter initialization, `dropout_rng` the row masks.
pub fn local_train(
    global: &GlobalState,
    model: &SurrogateModel,
    local: &Dataset,
    cfg: &LocalTrainConfig,
    agent_id: usize,
    init_rng: &mut SeededRng,
    dropout_rng: &mut SeededRng,
) -> Result<LocalOutcome> {
    if local.is_empty() {
        return Err(Error::Empty {
            context: "local_train",
        });
    }
    let round = global.round + 1;
    let base = model.effective_weights(&global.params)?;
    let mut factors = LoraFactors::init(model, init_rng);
    let p = model.lora.dropout;
    let mut losses = Vec::with_capacity(cfg.epochs + 1);

    for _ in 0..cfg.epochs {
        let masks = (p > 0.0).then(|| dropout_masks(model, p, dropout_rng));
        let (loss, grads) = lora_loss_grad(model, &base, &factors, masks.as_deref(), local)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "local_train",
                round,
                detail: format!("agent {agent_id}: loss {loss} (learning rate {})", cfg.lr),
            });
        }
        losses.push(loss);
        for (a, g) in factors.a.iter_mut().zip(&grads.a) {
            a.axpy(-cfg.lr, g)?;
        }
        for (b, g) in factors.b.iter_mut().zip(&grads.b) {
            b.axpy(-cfg.lr, g)?;
        }
    }
    let (final_loss, _) = lora_loss_grad(model, &base, &factors, None, local)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            stage: "local_train",
            round,
            detail: format!(
                "agent {agent_id}: final loss {final_loss} (learning rate {})",
                cfg.lr
            ),
        });
    }
    losses.push(final_loss);

    let deltas: Vec<Matrix> = factors.deltas(model.lora.scale(), None)?;
    let values = model.layout().flatten(&deltas)?;
    Ok(LocalOutcome {
        update: UpdateVector::benign(values, agent_id, round, local.len()),
        losses,
    })
}

/// Inverted-dropout row masks: each output row is dropped with probability
/// `p` and survivors are scaled by `1/(1−p)`.
fn dropout_masks(model: &SurrogateModel, p: f64, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let keep = 1.0 / (1.0 - p);
    model
        .layout()
        .layers
        .iter()
        .map(|s| {
            (0..s.out)
                .map(|_| if rng.uniform() < p { 0.0 } else { keep })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::data::synth_dataset;
    use crate::fedsim::model::{LoraScaling, LoraSpec};

    fn model(rng: &mut SeededRng, dropout: f64) -> SurrogateModel {
        let spec = LoraSpec {
            rank: 2,
            alpha: 4.0,
            dropout,
            scaling: LoraScaling::AlphaOverR,
            a_init_std: None,
        };
        SurrogateModel::new(&[20, 4], spec, rng).unwrap()
    }

    #[test]
    fn zero_learning_rate_returns_zero_update() {
        let mut rng = SeededRng::new(1);
        let m = model(&mut rng, 0.0);
        let ds = synth_dataset(4, 20, 10, 4.0, &mut rng).unwrap();
        let g = GlobalState::zeros(80, 1.0);
        let cfg = LocalTrainConfig { epochs: 5, lr: 0.0 };
        let out = local_train(
            &g,
            &m,
            &ds,
            &cfg,
            0,
            &mut rng.split("i"),
            &mut rng.split("d"),
        )
        .unwrap();
        assert!(out.update.values.iter().all(|&v| v == 0.0));
        assert_eq!(out.update.claimed_size, 40);
        assert_eq!(out.update.round, 1);
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let mut rng = SeededRng::new(2);
        let m = model(&mut rng, 0.0);
        let ds = synth_dataset(4, 20, 25, 5.0, &mut rng).unwrap();
        let g = GlobalState::zeros(80, 1.0);
        let cfg = LocalTrainConfig { epochs: 5, lr: 0.1 };
        let out = local_train(
            &g,
            &m,
            &ds,
            &cfg,
            0,
            &mut rng.split("i"),
            &mut rng.split("d"),
        )
        .unwrap();
        for w in out.losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{:?}", out.losses);
        }
        assert!(out.losses.last().unwrap() < out.losses.first().unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = SeededRng::new(3);
        let m = model(&mut rng, 0.0);
        let ds = synth_dataset(4, 20, 10, 50.0, &mut rng).unwrap();
        let g = GlobalState::zeros(80, 1.0);
        let cfg = LocalTrainConfig {
            epochs: 40,
            lr: 1e6,
        };
        let err = local_train(
            &g,
            &m,
            &ds,
            &cfg,
            3,
            &mut rng.split("i"),
            &mut rng.split("d"),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Diverged {
                    stage: "local_train",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn dropout_is_seeded() {
        let mut rng = SeededRng::new(4);
        let m = model(&mut rng, 0.5);
        let ds = synth_dataset(4, 20, 10, 4.0, &mut rng).unwrap();
        let g = GlobalState::zeros(80, 1.0);
        let cfg = LocalTrainConfig { epochs: 3, lr: 0.1 };
        let run = || {
            local_train(
                &g,
                &m,
                &ds,
                &cfg,
                0,
                &mut SeededRng::new(5),
                &mut SeededRng::new(6),
            )
            .unwrap()
            .update
        };
        assert_eq!(run(), run());
    }
}
