//! Experiment harness: configuration, the round loop, metric emission,
//! sweeps and self-checks.

pub mod config;
pub mod metrics;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{AttackKind, DefenseKind, ExperimentConfig};
pub use metrics::{summarize, write_outputs, Summary};
pub use run::{run_experiment, RoundRecord, RunOutcome};
pub use sweep::{run_sweep, SweepEntry, SweepIndex};
pub use verify::{verify, Check, VerifyReport};
