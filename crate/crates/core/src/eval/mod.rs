//! Offline inference over test material and the error analyses built on it.

mod metrics;
mod report;

use thiserror::Error;

pub use metrics::{
    histogram, l1, mr_stft_distance, percentile, stft_distance, windowed_errors, Histogram, SeriesStats, WindowError,
};
pub use report::{
    compare, evaluate, evaluate_manifest, process_offline, read_windowed_csv, write_summary_csv, write_windowed_csv,
    EvalReport, FileReport, SummaryRow, WINDOW, WINDOW_STFT,
};

use crate::audio::AudioError;
use crate::effects::EffectError;
use crate::nn::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input is at {found} Hz but the model runs at {expected} Hz; resample the file first")]
    SampleRate { found: u32, expected: u32 },
    #[error("prediction has {pred} samples but the target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Effect(#[from] EffectError),
}

impl From<AudioError> for EvalError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::SampleRate { found, expected } => EvalError::SampleRate { found, expected },
            other => EvalError::Effect(other.into()),
        }
    }
}

#[cfg(test)]
mod tests;
