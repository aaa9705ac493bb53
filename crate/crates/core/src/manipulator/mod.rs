//! The attacker: stealth thresholds, the augmented Lagrangian, its inner
//! maximization, projected dual updates and the per-round pipeline.

mod dual;
mod inner;
mod lagrangian;
mod round;
mod thresholds;

pub use dual::{dual_update, DualState, PenaltySchedule};
pub use inner::{inner_maximize, InnerConfig, InnerOutcome};
pub use lagrangian::{
    AttackProblem, DistanceReference, LagrangianEval, ModelSurrogate, PenaltyForm,
    QuadraticSurrogate, SimilarityAggregate, SurrogateObjective,
};
pub use round::{
    benign_mean, median_size, run_augmp_round, Adversary, AdversaryOutput, AugmpConfig, AugmpDebug,
    DistanceTarget, RoundContext, StealthReport,
};
pub use thresholds::{distances_to, estimate_thresholds, pairwise_similarities, Thresholds};
