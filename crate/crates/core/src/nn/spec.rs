use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Default TFiLM block size for the presets.
pub const DEFAULT_BLOCK_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gcn,
    Gcntf,
    Lstm,
}

/// How the TFiLM controller state maps to modulation parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfilmVariant {
    /// Scale is the controller hidden state, shift is its cell state.
    #[default]
    HiddenCell,
    /// Scale and shift come from a linear projection of the hidden state.
    Projected,
}

/// Declarative description of a network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub blocks: usize,
    pub layers: usize,
    pub kernel_size: usize,
    pub dilation_growth: usize,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tfilm_block_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default)]
    pub tfilm_variant: TfilmVariant,
}

/// The named configurations used throughout the experiments.
pub const PRESETS: [&str; 10] =
    ["gcn-1", "gcn-3", "gcn-250", "gcn-2500", "lstm-32", "lstm-96", "gcntf-1", "gcntf-3", "gcntf-250", "gcntf-2500"];

impl ModelSpec {
    pub fn gcn(blocks: usize, layers: usize, kernel_size: usize, dilation_growth: usize, channels: usize) -> Self {
        ModelSpec {
            family: Family::Gcn,
            blocks,
            layers,
            kernel_size,
            dilation_growth,
            channels,
            tfilm_block_size: None,
            hidden_size: None,
            tfilm_variant: TfilmVariant::HiddenCell,
        }
    }

    pub fn lstm(hidden: usize) -> Self {
        ModelSpec {
            family: Family::Lstm,
            blocks: 1,
            layers: 1,
            kernel_size: 1,
            dilation_growth: 1,
            channels: 1,
            tfilm_block_size: None,
            hidden_size: Some(hidden),
            tfilm_variant: TfilmVariant::HiddenCell,
        }
    }

    /// Adds TFiLM after every gated layer.
    pub fn with_tfilm(mut self, block_size: usize) -> Self {
        self.family = Family::Gcntf;
        self.tfilm_block_size = Some(block_size);
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_variant(mut self, variant: TfilmVariant) -> Self {
        self.tfilm_variant = variant;
        self
    }

    pub fn preset(name: &str) -> Result<Self, ModelError> {
        let base = |n: &str| match n {
            "1" => Some(ModelSpec::gcn(1, 10, 3, 2, 16)),
            "3" => Some(ModelSpec::gcn(2, 18, 3, 2, 16)),
            "250" => Some(ModelSpec::gcn(1, 4, 41, 6, 16)),
            "2500" => Some(ModelSpec::gcn(1, 10, 5, 3, 16)),
            _ => None,
        };
        let lower = name.to_ascii_lowercase();
        let spec = if let Some(rest) = lower.strip_prefix("gcntf-") {
            base(rest).map(|s| s.with_tfilm(DEFAULT_BLOCK_SIZE))
        } else if let Some(rest) = lower.strip_prefix("gcn-") {
            base(rest)
        } else {
            match lower.as_str() {
                "lstm-32" => Some(ModelSpec::lstm(32)),
                "lstm-96" => Some(ModelSpec::lstm(96)),
                _ => None,
            }
        };
        spec.ok_or_else(|| ModelError::UnknownPreset(name.to_string()))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.family == Family::Lstm {
            return match self.hidden_size {
                Some(h) if h >= 1 => Ok(()),
                _ => bad("recurrent baseline needs a hidden size ≥ 1".into()),
            };
        }
        if self.blocks == 0 || self.layers == 0 || !self.layers.is_multiple_of(self.blocks) {
            return bad(format!("{} layers cannot be split evenly into {} blocks", self.layers, self.blocks));
        }
        if self.kernel_size == 0 || self.dilation_growth == 0 || self.channels == 0 {
            return bad("kernel size, dilation growth and channels must be ≥ 1".into());
        }
        match (self.family, self.tfilm_block_size) {
            (Family::Gcntf, Some(b)) if b.is_power_of_two() => Ok(()),
            (Family::Gcntf, Some(b)) => bad(format!("TFiLM block size {b} is not a power of two")),
            (Family::Gcntf, None) => bad("TFiLM model without a block size".into()),
            _ => Ok(()),
        }
    }

    pub fn layers_per_block(&self) -> usize {
        self.layers / self.blocks
    }

    /// Dilation of every layer, resetting at each block boundary.
    pub fn dilations(&self) -> Vec<usize> {
        let per_block = self.layers_per_block();
        (0..self.layers).map(|i| self.dilation_growth.pow((i % per_block) as u32)).collect()
    }

    pub fn has_tfilm(&self) -> bool {
        self.family == Family::Gcntf
    }

    /// Number of past samples (including the current one) that reach an
    /// output sample through the convolutions. With TFiLM the controller
    /// state also carries information from all earlier completed blocks.
    pub fn receptive_field(&self) -> Result<usize, ModelError> {
        if self.family == Family::Lstm {
            return Err(ModelError::UnboundedReceptiveField);
        }
        self.validate()?;
        let per_block: usize = (0..self.layers_per_block()).map(|i| self.dilation_growth.pow(i as u32)).sum();
        Ok(1 + (self.kernel_size - 1) * self.blocks * per_block)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        if self.family == Family::Lstm {
            let h = self.hidden_size.unwrap_or(0);
            return 4 * ((1 + h) * h + 2 * h) + (h + 1);
        }
        let gated = |c_in: usize| c_in * 2 * c * self.kernel_size + 2 * c;
        let mix = c * c + c;
        let tfilm = if self.has_tfilm() {
            let controller = 4 * (c * c + c * c + 2 * c);
            match self.tfilm_variant {
                TfilmVariant::HiddenCell => controller,
                TfilmVariant::Projected => controller + 2 * c * c + 2 * c,
            }
        } else {
            0
        };
        let first = gated(1) + mix + tfilm;
        let rest = (self.layers - 1) * (gated(c) + mix + tfilm);
        let output = self.layers * c + 1;
        first + rest + output
    }
}

impl FromStr for ModelSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelSpec::preset(s)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Lstm => write!(f, "LSTM(hidden={})", self.hidden_size.unwrap_or(0)),
            fam => {
                let name = if fam == Family::Gcn { "GCN" } else { "GCNTF" };
                write!(
                    f,
                    "{name}(M={}, N={}, K={}, d={}, C={}",
                    self.blocks, self.layers, self.kernel_size, self.dilation_growth, self.channels
                )?;
                if let Some(b) = self.tfilm_block_size {
                    write!(f, ", B={b}")?;
                }
                write!(f, ")")
            }
        }
    }
}
