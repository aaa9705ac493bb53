//! The federated fine-tuning loop: synthetic data, non-IID partitioning, the
//! surrogate adapter model, local training, aggregation and evaluation.

mod data;
mod model;
mod partition;
mod server;
mod training;

pub use data::{simplex_means, synth_dataset, Dataset};
pub use model::{
    accuracy, lora_loss_grad, loss_and_grad, predict, LayerShape, LoraFactors, LoraScaling,
    LoraSpec, ParamLayout, SurrogateModel,
};
pub use partition::{dirichlet_partition, dirichlet_partition_indices};
pub use server::{
    aggregate, aggregate_with_weights, apply_global, evaluate, GlobalState, UpdateVector,
};
pub use training::{local_train, LocalOutcome, LocalTrainConfig};
