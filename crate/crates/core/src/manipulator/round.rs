//! One communication round of the attack for every adversarial agent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fedsim::{Dataset, GlobalState, SurrogateModel, UpdateVector};
use crate::graphcraft::{build_graph, observe_benign, select_params, SelectionPolicy};
use crate::gst::{initial_malicious, transform, RowPolicy};
use crate::mathcore::SeededRng;
use crate::vgae::{train_vgae, VgaeConfig};

use super::dual::{dual_update, DualState};
use super::inner::{inner_maximize, InnerConfig};
use super::lagrangian::{
    AttackProblem, DistanceReference, ModelSurrogate, PenaltyForm, SimilarityAggregate,
};
use super::thresholds::{estimate_thresholds, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceTarget {
    /// Distance to the predicted aggregate of the current round.
    PredictedGlobal,
    /// Distance to the last realized global update, as the server measures it.
    #[default]
    PreviousGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmpConfig {
    pub visibility: f64,
    /// `M`; capped at the update length.
    pub nodes: usize,
    pub selection: SelectionPolicy,
    pub vgae: VgaeConfig,
    pub row_policy: RowPolicy,
    pub inner: InnerConfig,
    pub penalty: PenaltyForm,
    pub similarity: SimilarityAggregate,
    pub distance_target: DistanceTarget,
    /// Replace the graph-guided initialization by the benign mean.
    pub grl_off: bool,
    /// Also bound the working thresholds by this round's observed benign
    /// statistics (`κ = 0`).
    pub tighten_to_observed: bool,
    /// Safety margin: the attacker aims for `(1−m)·d_T` and `δ_T − m`.
    pub margin: f64,
}

impl Default for AugmpConfig {
    fn default() -> Self {
        Self {
            visibility: 1.0,
            nodes: 128,
            selection: SelectionPolicy::VarianceTop,
            vgae: VgaeConfig::default(),
            row_policy: RowPolicy::Random,
            inner: InnerConfig::default(),
            penalty: PenaltyForm::Squared,
            similarity: SimilarityAggregate::default(),
            distance_target: DistanceTarget::PreviousGlobal,
            grl_off: false,
            tighten_to_observed: true,
            margin: 0.05,
        }
    }
}

/// Persistent per-adversary state.
#[derive(Debug, Clone)]
pub struct Adversary {
    pub agent_id: usize,
    /// Position among the adversaries, used by the cycle row policy.
    pub index: usize,
    /// Held-out split the surrogate loss is evaluated on.
    pub holdout: Dataset,
    pub dual: DualState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StealthReport {
    pub distance: f64,
    /// Hard aggregate `δ̄` over the observed benign updates.
    pub similarity: f64,
    pub thresholds: Thresholds,
    pub distance_ok: bool,
    pub similarity_ok: bool,
}

impl StealthReport {
    pub fn new(distance: f64, similarity: f64, thresholds: Thresholds) -> Self {
        Self {
            distance,
            similarity,
            thresholds,
            distance_ok: distance <= thresholds.distance,
            similarity_ok: similarity <= thresholds.similarity,
        }
    }

    pub fn satisfied(&self) -> bool {
        self.distance_ok && self.similarity_ok
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmpDebug {
    pub agent_id: usize,
    pub round: usize,
    pub observed: Vec<usize>,
    pub lambda_before: f64,
    pub theta_before: f64,
    pub lambda_after: f64,
    pub theta_after: f64,
    pub thresholds_source: String,
    pub elbo_trace: Vec<f64>,
    pub lagrangian_trace: Vec<f64>,
    pub surrogate_loss: f64,
    pub rollback: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AdversaryOutput {
    pub update: UpdateVector,
    pub report: StealthReport,
    pub debug: AugmpDebug,
    /// Stage failure that made the adversary fall back to the benign mean.
    pub failure: Option<String>,
}

/// Shared read-only inputs for one round.
pub struct RoundContext<'a> {
    pub round: usize,
    pub model: &'a SurrogateModel,
    pub global: &'a GlobalState,
    /// `Δw_g(t−1)`; zeros before the first aggregation.
    pub previous_delta: &'a [f64],
    /// All benign submissions of this round.
    pub benign: &'a [UpdateVector],
    /// Broadcast thresholds; open means "not yet known".
    pub thresholds: Thresholds,
    /// Margin and percentile for the attacker's own estimate when the
    /// broadcast is open.
    pub kappa: f64,
    pub percentile: f64,
    pub rng: &'a SeededRng,
}

/// Median of the observed claimed sizes (upper middle rounded half up).
pub fn median_size(observed: &[UpdateVector]) -> usize {
    let mut sizes: Vec<usize> = observed.iter().map(|u| u.claimed_size).collect();
    sizes.sort_unstable();
    let n = sizes.len();
    if n == 0 {
        return 1;
    }
    if n % 2 == 1 {
        sizes[n / 2]
    } else {
        (sizes[n / 2 - 1] + sizes[n / 2]).div_ceil(2)
    }
}

/// Coordinatewise mean of `updates`.
pub fn benign_mean(updates: &[UpdateVector]) -> Vec<f64> {
    let n = updates.len() as f64;
    let mut out = vec![0.0; updates.first().map_or(0, UpdateVector::len)];
    for u in updates {
        for (o, v) in out.iter_mut().zip(&u.values) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Every adversary observes, builds its graph, trains its VGAE, runs the
/// spectral transform and refines the result against the augmented
/// Lagrangian; multipliers advance once. Outputs follow `adversaries` order.
pub fn run_augmp_round(
    ctx: &RoundContext<'_>,
    cfg: &AugmpConfig,
    adversaries: &mut [Adversary],
) -> Result<Vec<AdversaryOutput>> {
    adversaries
        .par_iter_mut()
        .map(|adv| {
            let rng = ctx.rng.split(&format!("augmp/{}", adv.agent_id));
            run_one(ctx, cfg, adv, &rng)
        })
        .collect()
}

fn run_one(
    ctx: &RoundContext<'_>,
    cfg: &AugmpConfig,
    adv: &mut Adversary,
    rng: &SeededRng,
) -> Result<AdversaryOutput> {
    let observed = observe_benign(ctx.benign, cfg.visibility, &mut rng.split("observe"))
        .map_err(|e| e.at_stage("observe_benign"))?;
    let fill = benign_mean(&observed);
    let claimed = median_size(&observed);
    let refs: Vec<&[f64]> = observed.iter().map(|u| u.values.as_slice()).collect();

    let target = match cfg.distance_target {
        DistanceTarget::PredictedGlobal => fill.clone(),
        DistanceTarget::PreviousGlobal => ctx.previous_delta.to_vec(),
    };
    let (thresholds, source) = if ctx.thresholds.is_open() {
        let est = if refs.len() >= 2 {
            estimate_thresholds(&refs, &target, ctx.kappa, ctx.percentile)?
        } else {
            Thresholds::OPEN
        };
        (est, "own_estimate")
    } else {
        (ctx.thresholds, "broadcast")
    };
    // Aim inside both the known thresholds and the statistics of this
    // round's observed benign updates, then keep a margin.
    let mut working = thresholds;
    if cfg.tighten_to_observed && refs.len() >= 2 {
        let seen = estimate_thresholds(&refs, &target, 0.0, ctx.percentile)?;
        working.distance = working.distance.min(seen.distance);
        working.similarity = working.similarity.min(seen.similarity);
    }
    let mut dual = adv.dual;
    dual.thresholds = Thresholds {
        distance: working.distance * (1.0 - cfg.margin),
        similarity: working.similarity - cfg.margin,
    };

    let reference = match cfg.distance_target {
        DistanceTarget::PredictedGlobal => DistanceReference::PredictedGlobal,
        DistanceTarget::PreviousGlobal => DistanceReference::Fixed(ctx.previous_delta.to_vec()),
    };
    let surrogate = ModelSurrogate {
        model: ctx.model,
        data: &adv.holdout,
    };
    let full_len = fill.len();
    let all: Vec<usize> = (0..full_len).collect();

    let attempt = || -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let m = cfg.nodes.min(full_len);
        let selected =
            select_params(&observed, m, cfg.selection).map_err(|e| e.at_stage("select_params"))?;
        let init_fill: Vec<f64> = selected.iter().map(|&i| fill[i]).collect();
        if cfg.grl_off {
            return Ok((selected, init_fill, Vec::new()));
        }
        let graph = build_graph(&observed, &selected).map_err(|e| e.at_stage("build_graph"))?;
        let vgae = train_vgae(&graph, &cfg.vgae, &mut rng.split("vgae"))
            .map_err(|e| e.at_stage("train_vgae"))?;
        let f_hat = transform(&graph.features, &graph.adjacency, &vgae.a_hat)
            .map_err(|e| e.at_stage("gst"))?;
        let init = initial_malicious(
            &f_hat,
            cfg.row_policy,
            adv.index,
            &init_fill,
            &mut rng.split("row"),
        )
        .map_err(|e| e.at_stage("initial_malicious"))?;
        Ok((selected, init, vgae.elbo_trace))
    };

    let fallback = |failure: String, selected: &[usize]| -> Result<AdversaryOutput> {
        let problem = problem(
            ctx,
            cfg,
            &observed,
            claimed,
            selected,
            &fill,
            reference.clone(),
            &surrogate,
        );
        let (d, s) = problem.stealth_metrics(&fill)?;
        Ok(AdversaryOutput {
            update: malicious(fill.clone(), adv.agent_id, ctx.round, claimed),
            report: StealthReport::new(d, s, thresholds),
            debug: AugmpDebug {
                agent_id: adv.agent_id,
                round: ctx.round,
                observed: observed.iter().map(|u| u.agent_id).collect(),
                lambda_before: adv.dual.lambda,
                theta_before: adv.dual.theta,
                lambda_after: adv.dual.lambda,
                theta_after: adv.dual.theta,
                thresholds_source: source.to_string(),
                elbo_trace: Vec::new(),
                lagrangian_trace: Vec::new(),
                surrogate_loss: f64::NAN,
                rollback: None,
            },
            failure: Some(failure),
        })
    };

    let (selected, init, elbo_trace) = match attempt() {
        Ok(v) => v,
        Err(e) => return fallback(e.to_string(), &all),
    };
    let problem = problem(
        ctx,
        cfg,
        &observed,
        claimed,
        &selected,
        &fill,
        reference.clone(),
        &surrogate,
    );
    let outcome = match problem
        .validate()
        .and_then(|_| inner_maximize(&problem, &init, &dual, &cfg.inner))
    {
        Ok(o) => o,
        Err(e) => return fallback(e.at_stage("inner_maximize").to_string(), &selected),
    };
    let values = problem.compose(&outcome.x)?;
    let report = StealthReport::new(
        outcome.best.distance,
        outcome.best.similarity_hard,
        thresholds,
    );
    let next = dual_update(&dual, report.distance, report.similarity);
    let debug = AugmpDebug {
        agent_id: adv.agent_id,
        round: ctx.round,
        observed: observed.iter().map(|u| u.agent_id).collect(),
        lambda_before: dual.lambda,
        theta_before: dual.theta,
        lambda_after: next.lambda,
        theta_after: next.theta,
        thresholds_source: source.to_string(),
        elbo_trace,
        lagrangian_trace: outcome.trace,
        surrogate_loss: outcome.best.loss,
        rollback: outcome.rollback,
    };
    adv.dual = next;
    Ok(AdversaryOutput {
        update: malicious(values, adv.agent_id, ctx.round, claimed),
        report,
        debug,
        failure: None,
    })
}

fn malicious(values: Vec<f64>, agent_id: usize, round: usize, claimed: usize) -> UpdateVector {
    UpdateVector {
        values,
        agent_id,
        round,
        claimed_size: claimed.max(1),
        is_malicious: true,
    }
}

#[allow(clippy::too_many_arguments)]
fn problem<'a>(
    ctx: &'a RoundContext<'_>,
    cfg: &AugmpConfig,
    observed: &'a [UpdateVector],
    claimed: usize,
    selected: &'a [usize],
    fill: &'a [f64],
    reference: DistanceReference,
    surrogate: &'a ModelSurrogate<'_>,
) -> AttackProblem<'a> {
    AttackProblem {
        global: &ctx.global.params,
        server_lr: ctx.global.server_lr,
        observed: observed
            .iter()
            .map(|u| (u.values.as_slice(), u.claimed_size as f64))
            .collect(),
        own_size: claimed.max(1) as f64,
        selected,
        fill,
        reference,
        similarity: cfg.similarity,
        penalty: cfg.penalty,
        surrogate,
    }
}
