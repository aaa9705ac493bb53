//! The round loop: local training, attack synthesis, screening, aggregation
//! and evaluation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{alie_update, resolve_z, rmp_update, BenignStats};
use crate::error::{Error, Result};
use crate::fedsim::{
    aggregate, apply_global, dirichlet_partition, evaluate, local_train, synth_dataset, Dataset,
    GlobalState, LocalTrainConfig, SurrogateModel, UpdateVector,
};
use crate::graphcraft::observe_benign;
use crate::manipulator::{
    estimate_thresholds, median_size, run_augmp_round, Adversary, AugmpDebug, DualState,
    PenaltySchedule, RoundContext, StealthReport, Thresholds,
};
use crate::mathcore::{norm2, SeededRng};
use crate::sentinel::{distance_filter, intersect, similarity_filter, DefenseVerdict};

use super::config::{AttackKind, ExperimentConfig};

/// Everything recorded about one round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_accuracy: f64,
    /// Mean over benign agents of the global model's accuracy on their local
    /// test splits.
    pub local_accuracy: f64,
    /// Mean final local training loss of the benign agents.
    pub benign_loss: f64,
    /// Thresholds the server broadcast for this round (open in round one).
    pub thresholds: Thresholds,
    /// `Δw_g(t−1)`, the distance filter's reference.
    pub reference: Vec<f64>,
    /// All submissions in ascending agent order.
    pub submissions: Vec<UpdateVector>,
    pub distance_verdict: DefenseVerdict,
    pub similarity_verdict: DefenseVerdict,
    /// Agents whose update entered the aggregate.
    pub kept: Vec<usize>,
    pub alarm: Option<String>,
    /// One per adversary, for the main attack only.
    pub stealth: Vec<StealthReport>,
    /// `(agent_id, λ, θ)` after this round's dual update.
    pub duals: Vec<(usize, f64, f64)>,
    pub failures: Vec<String>,
    pub global_update_norm: f64,
    #[serde(skip)]
    pub debug: Vec<AugmpDebug>,
}

impl RoundRecord {
    pub fn benign(&self) -> impl Iterator<Item = &UpdateVector> {
        self.submissions.iter().filter(|u| !u.is_malicious)
    }

    pub fn malicious(&self) -> impl Iterator<Item = &UpdateVector> {
        self.submissions.iter().filter(|u| u.is_malicious)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    pub wall_time_seconds: f64,
}

impl RunOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.global_accuracy)
    }

    pub fn final_local_accuracy(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.local_accuracy)
    }
}

struct Setup {
    model: SurrogateModel,
    benign_train: Vec<Dataset>,
    benign_test: Vec<Dataset>,
    adversaries: Vec<Adversary>,
    test: Dataset,
}

fn setup(cfg: &ExperimentConfig, root: &SeededRng) -> Result<Setup> {
    let d = &cfg.data;
    let pool = synth_dataset(
        d.classes,
        d.dim,
        d.per_class,
        d.separation,
        &mut root.split("data/train"),
    )?;
    let test = synth_dataset(
        d.classes,
        d.dim,
        d.test_per_class,
        d.separation,
        &mut root.split("data/test"),
    )?;
    // Partition over every potential agent so benign shards do not depend on
    // whether an attack is active.
    let total = cfg.agents + cfg.adversaries;
    let parts = dirichlet_partition(
        &pool,
        total,
        cfg.dirichlet_beta,
        &mut root.split("partition"),
    )?;
    let model = SurrogateModel::new(
        &cfg.model_dims(),
        cfg.model.lora(),
        &mut root.split("model"),
    )?;

    let mut benign_train = Vec::with_capacity(cfg.agents);
    let mut benign_test = Vec::with_capacity(cfg.agents);
    for (i, part) in parts[..cfg.agents].iter().enumerate() {
        let (train, hold) =
            part.holdout_split(d.holdout_fraction, &mut root.split(&format!("holdout/{i}")))?;
        benign_train.push(train);
        benign_test.push(hold);
    }
    let mut adversaries = Vec::new();
    if cfg.attack != AttackKind::None {
        for (j, part) in parts[cfg.agents..].iter().enumerate() {
            let id = cfg.agents + j;
            let (_, hold) = part.holdout_split(
                d.holdout_fraction,
                &mut root.split(&format!("holdout/{id}")),
            )?;
            let a = &cfg.augmp;
            let mut dual = if a.al_penalty_off {
                DualState::penalty_free(a.dual_step)?
            } else {
                DualState::new(a.rho_lambda, a.rho_theta, a.dual_step)?
            };
            if a.rho_growth > 1.0 {
                dual.schedule = Some(PenaltySchedule {
                    growth: a.rho_growth,
                    rho_max: a.rho_max,
                });
            }
            adversaries.push(Adversary {
                agent_id: id,
                index: j,
                holdout: hold,
                dual,
            });
        }
    }
    Ok(Setup {
        model,
        benign_train,
        benign_test,
        adversaries,
        test,
    })
}

/// Runs the whole experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let root = SeededRng::new(cfg.seed);
    let Setup {
        model,
        benign_train,
        benign_test,
        mut adversaries,
        test,
    } = setup(cfg, &root)?;
    let len = model.layout().total_len();
    let mut global = GlobalState::zeros(len, cfg.server_lr);
    let mut previous_delta = vec![0.0; len];
    let mut thresholds = Thresholds::OPEN;
    let local_cfg = LocalTrainConfig {
        epochs: cfg.local_epochs,
        lr: cfg.local_lr,
    };
    let augmp = cfg.augmp_config();
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for t in 1..=cfg.rounds {
        let rrng = root.split(&format!("round/{t}"));
        // The adapter initialization is broadcast: every agent starts from
        // the same factors in a given round.
        let init = rrng.split("lora-init");
        let outcomes: Vec<_> = benign_train
            .par_iter()
            .enumerate()
            .map(|(i, ds)| {
                local_train(
                    &global,
                    &model,
                    ds,
                    &local_cfg,
                    i,
                    &mut init.clone(),
                    &mut rrng.split(&format!("dropout/{i}")),
                )
            })
            .collect::<Result<_>>()?;
        let benign_loss = outcomes
            .iter()
            .map(|o| *o.losses.last().expect("final loss"))
            .sum::<f64>()
            / outcomes.len() as f64;
        let benign: Vec<UpdateVector> = outcomes.into_iter().map(|o| o.update).collect();

        let mut stealth = Vec::new();
        let mut duals = Vec::new();
        let mut failures = Vec::new();
        let mut debug = Vec::new();
        let malicious: Vec<UpdateVector> = match cfg.attack {
            AttackKind::None => Vec::new(),
            AttackKind::Augmp => {
                let ctx = RoundContext {
                    round: t,
                    model: &model,
                    global: &global,
                    previous_delta: &previous_delta,
                    benign: &benign,
                    thresholds,
                    kappa: cfg.thresholds.kappa,
                    percentile: cfg.thresholds.percentile,
                    rng: &rrng,
                };
                let outs = run_augmp_round(&ctx, &augmp, &mut adversaries)?;
                outs.into_iter()
                    .map(|o| {
                        stealth.push(o.report);
                        if let Some(f) = o.failure {
                            failures.push(format!("agent {}: {f}", o.update.agent_id));
                        }
                        debug.push(o.debug);
                        o.update
                    })
                    .collect()
            }
            AttackKind::Alie | AttackKind::Rmp => adversaries
                .iter()
                .map(|adv| baseline_update(cfg, &benign, adv.agent_id, t, &rrng))
                .collect::<Result<_>>()?,
        };
        for adv in &adversaries {
            duals.push((adv.agent_id, adv.dual.lambda, adv.dual.theta));
        }

        let mut submissions: Vec<UpdateVector> = benign.iter().cloned().chain(malicious).collect();
        submissions.sort_by_key(|u| u.agent_id);

        let dist = distance_filter(&submissions, &previous_delta, thresholds.distance)?;
        let sim = similarity_filter(
            &submissions,
            thresholds.similarity,
            cfg.thresholds.score_policy,
        )?;
        let mut active: Vec<&DefenseVerdict> = Vec::new();
        if cfg.defense.uses_distance() {
            active.push(&dist.verdict);
        }
        if cfg.defense.uses_similarity() {
            active.push(&sim.verdict);
        }
        let (kept, alarm) = intersect(&submissions, &active);
        let alarm = alarm.or_else(|| active.iter().filter_map(|v| v.alarm.clone()).next());

        let delta = aggregate(&kept)?;
        let next = apply_global(&global, &delta, cfg.server_lr)?;
        if next.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                stage: "aggregate",
                round: t,
                detail: "global parameters became non-finite".into(),
            });
        }
        let global_accuracy = evaluate(&model, &next, &test)?;
        let local_accuracy = benign_test
            .iter()
            .map(|ds| evaluate(&model, &next, ds))
            .sum::<Result<f64>>()?
            / benign_test.len() as f64;

        // Next round's thresholds come from this round's benign updates,
        // measured with the filter's own metric.
        let refs: Vec<&[f64]> = benign.iter().map(|u| u.values.as_slice()).collect();
        let next_thresholds = estimate_thresholds(
            &refs,
            &previous_delta,
            cfg.thresholds.kappa,
            cfg.thresholds.percentile,
        )?;

        rounds.push(RoundRecord {
            round: t,
            global_accuracy,
            local_accuracy,
            benign_loss,
            thresholds,
            reference: previous_delta.clone(),
            submissions,
            distance_verdict: dist.verdict,
            similarity_verdict: sim.verdict,
            kept: kept.iter().map(|u| u.agent_id).collect(),
            alarm,
            stealth,
            duals,
            failures,
            global_update_norm: norm2(&delta),
            debug,
        });
        thresholds = next_thresholds;
        previous_delta = delta;
        global = next;
    }
    Ok(RunOutcome {
        config: cfg.clone(),
        rounds,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

fn baseline_update(
    cfg: &ExperimentConfig,
    benign: &[UpdateVector],
    agent_id: usize,
    round: usize,
    rrng: &SeededRng,
) -> Result<UpdateVector> {
    let rng = rrng.split(&format!("baseline/{agent_id}"));
    let observed = observe_benign(benign, cfg.augmp.visibility, &mut rng.split("observe"))?;
    let stats = BenignStats::from_updates(&observed)?;
    let values = match cfg.attack {
        AttackKind::Alie => {
            let z = resolve_z(
                cfg.alie.z_policy,
                cfg.agents + cfg.adversaries,
                cfg.adversaries,
            )?;
            alie_update(&stats, z, cfg.alie.direction)?
        }
        AttackKind::Rmp => rmp_update(&stats, cfg.rmp.scale, &mut rng.split("rmp"))?,
        _ => unreachable!("baseline_update called for {:?}", cfg.attack),
    };
    Ok(UpdateVector {
        values,
        agent_id,
        round,
        claimed_size: median_size(&observed).max(1),
        is_malicious: true,
    })
}
