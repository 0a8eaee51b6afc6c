use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tfilm_fx::nn::{Family, ModelSpec, TfilmVariant, PRESETS};
use tfilm_fx::train::{LossConfig, TrainConfig};

use crate::UsageError;

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "FX_SEED";

/// A preset name or a full architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Spec(ModelSpec),
}

impl ModelChoice {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            ModelChoice::Preset(name) => ModelSpec::preset(name).map_err(|e| UsageError(e.to_string()).into()),
            ModelChoice::Spec(spec) => Ok(spec.clone()),
        }
    }
}

/// Everything a training run needs, as read from `--config` and then
/// overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelChoice>,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// `--seed`, else the config value, else `FX_SEED`, else 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map_err(|_| UsageError(format!("{SEED_ENV}={v:?} is not an unsigned integer")).into())
        }
        Err(_) => Ok(0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    HiddenCell,
    Projected,
}

/// Architecture selection shared by several commands.
#[derive(Args, Clone, Debug, Default)]
pub struct ModelArgs {
    /// Preset name: gcn-1, gcn-3, gcn-250, gcn-2500, gcntf-*, lstm-32, lstm-96.
    #[arg(long)]
    pub model: Option<String>,
    /// Override the channel width of a convolutional model.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Add TFiLM with this block size, or change the existing block size.
    #[arg(long)]
    pub tfilm_block_size: Option<usize>,
    #[arg(long, value_enum)]
    pub tfilm_variant: Option<VariantArg>,
}

impl ModelArgs {
    pub fn is_set(&self) -> bool {
        self.model.is_some()
            || self.channels.is_some()
            || self.tfilm_block_size.is_some()
            || self.tfilm_variant.is_some()
    }

    /// The flag choice over `base`, with overrides applied.
    pub fn resolve(&self, base: Option<&ModelChoice>) -> Result<ModelSpec> {
        let mut spec = match (&self.model, base) {
            (Some(name), _) => ModelSpec::preset(name).map_err(|e| UsageError(e.to_string()))?,
            (None, Some(choice)) => choice.spec()?,
            (None, None) => {
                return Err(
                    UsageError(format!("no model given; pass --model with one of {}", PRESETS.join(", "))).into()
                )
            }
        };
        if spec.family == Family::Lstm
            && (self.channels.is_some() || self.tfilm_block_size.is_some() || self.tfilm_variant.is_some())
        {
            return Err(UsageError("--channels and --tfilm-* apply to convolutional models only".into()).into());
        }
        if let Some(c) = self.channels {
            spec = spec.with_channels(c);
        }
        if let Some(b) = self.tfilm_block_size {
            spec = spec.with_tfilm(b);
        }
        if let Some(v) = self.tfilm_variant {
            spec = spec.with_variant(match v {
                VariantArg::HiddenCell => TfilmVariant::HiddenCell,
                VariantArg::Projected => TfilmVariant::Projected,
            });
        }
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(spec)
    }
}

/// Preset name of `spec`, if it is one.
pub fn preset_name(spec: &ModelSpec) -> Option<&'static str> {
    PRESETS.into_iter().find(|p| ModelSpec::preset(p).is_ok_and(|s| &s == spec))
}
