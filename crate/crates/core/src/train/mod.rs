//! Losses, optimiser, schedules, checkpoints and the training loop.

mod checkpoint;
mod dataset;
mod loss;
mod optim;
mod schedule;
mod trainer;

use thiserror::Error;

pub use checkpoint::{AdamMeta, Checkpoint, TrainingState, FORMAT, VERSION};
pub use dataset::{crop, Segment, TrainData};
pub use loss::{composite_loss, mae, mr_stft, spectral_convergence, stft_loss, LossConfig, LossParts};
pub use optim::{Adam, AdamConfig};
pub use schedule::{early_stop, lr_schedule, Schedule, ScheduleConfig, Step};
pub use trainer::{train, validate, EpochHook, EpochMetrics, TrainConfig, TrainOptions, TrainOutcome};

use crate::effects::EffectError;
use crate::nn::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("invalid training settings: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("metrics log: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Effect(#[from] EffectError),
}

impl From<crate::audio::AudioError> for TrainError {
    fn from(e: crate::audio::AudioError) -> Self {
        TrainError::Effect(e.into())
    }
}
