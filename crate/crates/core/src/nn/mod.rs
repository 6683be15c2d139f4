//! From-scratch training kernel: recurrent sequence autoencoder, classifier
//! on a frozen encoder, small dense nets, SGD and gradient checking.
//!
//! All models keep their weights in one flat [`ModelParams`] vector so the
//! federated layer can average them without knowing the architecture.

mod autoencoder;
mod classifier;
mod gradcheck;
pub mod layers;
mod loss;
mod mlp;
mod params;
mod train;

use thiserror::Error;

pub use autoencoder::{Autoencoder, AutoencoderConfig};
pub use classifier::{Classifier, ClassifierConfig, LabeledLatent};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{Activation, CellKind};
pub use loss::{cce_loss, mse_loss, softmax};
pub use mlp::{Example, Mlp};
pub use params::{sgd_step, Block, Layout, ModelParams, PARAMS_VERSION};
pub use train::{batch_loss, batch_loss_grad, train_epoch, TrainConfig, Trainable};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("probabilities do not form a distribution")]
    NonDistribution,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}
