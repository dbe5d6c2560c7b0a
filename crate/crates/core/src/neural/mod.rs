//! Reduced-basis neural operators: an MLP on encoded coefficients.

pub mod mlp;
pub mod train;

pub use mlp::{Activation, Batch, Layer, MlpSurrogate, Objective, ParamSet};
pub use train::{
    dataset_loss, jacobian_weights, split_indices, train, train_from, EpochRecord, NetSpec, TrainConfig, TrainOutcome,
    TrainingDataset,
};
