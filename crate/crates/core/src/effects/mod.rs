//! Reference effects used to synthesise training data: an envelope-biased
//! fuzz and a feed-forward compressor, both with attack/release controls,
//! plus the clean-signal generator and the paired corpus writer.

mod compressor;
mod corpus;
mod envelope;
mod fuzz;
mod signal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compressor::{compress, compressor_gain_trace, db_to_gain, gain_to_db, Compressor, CompressorParams};
pub use corpus::{split_bounds, synthesize_corpus, DatasetManifest, ManifestEntry, Split};
pub use envelope::{envelope_follow, one_pole_coeff, time_to_63, DcBlocker, EnvelopeFollower};
pub use fuzz::{fuzz, fuzz_envelope_trace, Fuzz, FuzzParams, DC_BLOCK_HZ};
pub use signal::{render, SignalPlan, Source};

use crate::audio::AudioError;

/// Attack/release pairs in ms for the fuzz experiments.
pub const FUZZ_GRID: [(f64, f64); 3] = [(50.0, 50.0), (10.0, 250.0), (1.0, 2500.0)];
/// Attack/release pairs in ms for the compressor experiments.
pub const COMPRESSOR_GRID: [(f64, f64); 3] = [(10.0, 50.0), (5.0, 250.0), (1.0, 2500.0)];

#[derive(Debug, Error)]
pub enum EffectError {
    #[error("invalid effect parameters: {0}")]
    InvalidParams(String),
    #[error("unknown effect `{0}` (expected fuzz or compressor)")]
    UnknownEffect(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// A fully parameterised effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", content = "params", rename_all = "kebab-case")]
pub enum EffectParams {
    Fuzz(FuzzParams),
    Compressor(CompressorParams),
}

impl EffectParams {
    /// Default settings of the named effect with the given ballistics.
    pub fn with_times(kind: &str, attack_ms: f64, release_ms: f64) -> Result<Self, EffectError> {
        let p = match kind {
            "fuzz" => EffectParams::Fuzz(FuzzParams { attack_ms, release_ms, ..FuzzParams::default() }),
            "compressor" => {
                EffectParams::Compressor(CompressorParams { attack_ms, release_ms, ..CompressorParams::default() })
            }
            other => return Err(EffectError::UnknownEffect(other.to_string())),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EffectParams::Fuzz(_) => "fuzz",
            EffectParams::Compressor(_) => "compressor",
        }
    }

    pub fn validate(&self) -> Result<(), EffectError> {
        match self {
            EffectParams::Fuzz(p) => p.validate(),
            EffectParams::Compressor(p) => p.validate(),
        }
    }

    pub fn process(&self, x: &[f32], sample_rate: f64) -> Result<Vec<f32>, EffectError> {
        match self {
            EffectParams::Fuzz(p) => fuzz(x, p, sample_rate),
            EffectParams::Compressor(p) => compress(x, p, sample_rate),
        }
    }
}
