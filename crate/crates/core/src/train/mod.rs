//! Losses, the training loop, staged pyramid training, self-ensembling and
//! evaluation reports.

mod adrsr;
mod config;
mod ensemble;
mod eval;
mod loss;
mod trainer;

use thiserror::Error;

use crate::data::DataError;
use crate::imaging::ImageError;
use crate::models::ModelError;
use crate::tensor::TensorError;

pub use adrsr::{grid_artifact_energy, train_adrsr, AdrsrSchedule, Stage, StageKind, StageReport};
pub use config::{TrainConfig, TRAIN_KEYS};
pub use ensemble::{self_ensemble_predict, Bicubic, Ensemble, Upscaler};
pub use eval::{evaluate, evaluate_dirs, read_val_list, EvalReport, EvalRow, Summary};
pub use loss::{edge_loss, l1_loss, training_loss, LossKind};
pub use trainer::{train, validate, MetricsLog, MetricsRow, TrainOptions, TrainState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("non-finite loss at step {step} (lr {lr}){origin}")]
    NonFinite { step: u64, lr: f64, origin: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
}
