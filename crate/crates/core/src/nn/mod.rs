//! Network layers and model assembly.
//!
//! A gated convolutional network (GCN) stacks causal dilated convolutions,
//! each followed by a tanh·sigmoid gate and a pointwise mix that feeds both
//! the residual path and a skip output. All skip outputs are mixed down to
//! one channel at the end. GCNTF models insert a TFiLM layer between gate and
//! mix, rescaling every channel block-by-block with parameters produced by a
//! small recurrent controller. The recurrent baseline is a single LSTM layer
//! with a linear readout added to the input.

mod blocks;
mod model;
mod spec;

use thiserror::Error;

use crate::tensor::TensorError;

pub use blocks::{
    gated_block_forward, lstm_forward, tfilm_forward, GatedLayer, LstmState, LstmVars, TfilmLayer, TfilmState,
};
pub use model::Model;
pub(crate) use model::{LayerSlots, Layout};
pub use spec::{Family, ModelSpec, TfilmVariant, DEFAULT_BLOCK_SIZE, PRESETS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model preset `{0}` (expected one of {presets})", presets = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("recurrent models have an unbounded receptive field")]
    UnboundedReceptiveField,
    #[error("parameter `{0}` is missing")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests;
