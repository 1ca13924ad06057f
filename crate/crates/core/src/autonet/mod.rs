//! Dense feed-forward autoencoder: activations, masked reconstruction loss,
//! SGD/Adam training and rating prediction.

mod activation;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use checkpoint::{decode_model, encode_parameters, sha256_hex, ModelManifest};
pub use loss::{masked_mse, masked_rmse, unmasked_mse, BatchLoss, LossError, LossKind};
pub use model::{
    predict_ratings, predict_ratings_batch, ArchitectureConfig, Autoencoder, DenseLayer,
    Gradients, LayerSpec, RELU_OUTPUT_BIAS,
};
pub use train::{
    gather_rows, train, train_observed, EpochStats, Optimizer, RowSource, TrainConfig,
    TrainReport,
};

use std::fmt::{Debug, Display};
use thiserror::Error;

/// Floating-point element type of a model. Training and checkpoints use
/// `f32`; `f64` is available for numerically sensitive checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum AutonetError {
    #[error("input has {found} columns, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid architecture: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}
