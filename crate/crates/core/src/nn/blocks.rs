use crate::tensor::{lstm_sequence, Real, Tensor, Var};

use super::{ModelError, TfilmVariant};

/// Parameters of one TFiLM layer as graph variables.
pub struct TfilmLayer<'a, T: Real> {
    pub block_size: usize,
    pub variant: TfilmVariant,
    pub w_ih: &'a Var<T>,
    pub w_hh: &'a Var<T>,
    pub b_ih: &'a Var<T>,
    pub b_hh: &'a Var<T>,
    /// Projection weight `[2C×C]` and bias `[2C]`, projected variant only.
    pub projection: Option<(&'a Var<T>, &'a Var<T>)>,
}

/// Parameters of one gated convolution layer as graph variables.
pub struct GatedLayer<'a, T: Real> {
    pub dilation: usize,
    pub conv_w: &'a Var<T>,
    pub conv_b: &'a Var<T>,
    pub mix_w: &'a Var<T>,
    pub mix_b: &'a Var<T>,
    pub tfilm: Option<TfilmLayer<'a, T>>,
}

/// Recurrent controller state of a TFiLM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TfilmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
    pub samples_into_block: usize,
    /// Running per-channel maximum of the block in progress
    /// (`-inf` when no sample has been seen yet).
    pub block_max: Vec<f32>,
}

impl TfilmState {
    pub fn new(channels: usize) -> Self {
        TfilmState {
            h: vec![0.0; channels],
            c: vec![0.0; channels],
            samples_into_block: 0,
            block_max: vec![f32::NEG_INFINITY; channels],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

pub struct LstmVars<'a, T: Real> {
    pub w_ih: &'a Var<T>,
    pub w_hh: &'a Var<T>,
    pub b_ih: &'a Var<T>,
    pub b_hh: &'a Var<T>,
}

fn channels_of<T: Real>(v: &Var<T>) -> usize {
    v.shape()[0]
}

/// One gated layer: `z = tanh(filter) ⊙ sigmoid(gate)`, optional TFiLM,
/// then a pointwise mix. Returns `(residual_out, skip_out)`; the residual
/// adds the layer input whenever channel counts agree.
pub fn gated_block_forward<T: Real>(x: &Var<T>, layer: &GatedLayer<'_, T>) -> Result<(Var<T>, Var<T>), ModelError> {
    let pre = x.conv1d_causal(layer.conv_w, layer.conv_b, layer.dilation)?;
    let c = channels_of(&pre) / 2;
    let filter = pre.narrow(0, 0, c)?.tanh();
    let gate = pre.narrow(0, c, c)?.sigmoid();
    let mut z = filter.mul(&gate)?;
    if let Some(tfilm) = &layer.tfilm {
        z = tfilm_forward(&z, tfilm)?.0;
    }
    let skip = z.conv1d_causal(layer.mix_w, layer.mix_b, 1)?;
    let residual = if x.shape()[0] == c { skip.add(x)? } else { skip.clone() };
    Ok((residual, skip))
}

/// Time-varying feature modulation of `z` (`[C×L]`).
///
/// The sequence is split into blocks of `block_size` samples. Each completed
/// block is max-pooled to `C` values and fed to the controller. Block `t` is
/// modulated as `γ·z + β` with parameters derived from the controller state
/// after blocks `0..t`, so the first block uses the zero initial state and no
/// output depends on samples later than itself. Also returns the controller
/// state after the whole input, matching what a streaming run would hold.
pub fn tfilm_forward<T: Real>(z: &Var<T>, layer: &TfilmLayer<'_, T>) -> Result<(Var<T>, TfilmState), ModelError> {
    let &[c, len] = z.shape() else {
        return Err(ModelError::InvalidSpec(format!("TFiLM input shape {:?}", z.shape())));
    };
    let b = layer.block_size;
    let blocks = len.div_ceil(b);
    let complete = len / b;

    let mut state = TfilmState::new(c);
    let zero_col = Var::constant(Tensor::zeros(vec![c, 1]));
    let (mut hidden_cols, mut cell_cols) = (vec![zero_col.clone()], vec![zero_col]);
    if complete > 0 {
        let pooled = z.narrow(1, 0, complete * b)?.maxpool1d(b)?;
        let seq = lstm_sequence(&pooled, layer.w_ih, layer.w_hh, layer.b_ih, layer.b_hh)?;
        let d = seq.data();
        for j in 0..c {
            state.h[j] = d[j * complete + complete - 1].as_f64() as f32;
            state.c[j] = d[(c + j) * complete + complete - 1].as_f64() as f32;
        }
        if blocks > 1 {
            hidden_cols.push(seq.narrow(0, 0, c)?.narrow(1, 0, blocks - 1)?);
            cell_cols.push(seq.narrow(0, c, c)?.narrow(1, 0, blocks - 1)?);
        }
    }
    state.samples_into_block = len % b;
    if state.samples_into_block > 0 {
        let zd = z.data();
        for j in 0..c {
            state.block_max[j] = zd[j * len + complete * b..(j + 1) * len]
                .iter()
                .fold(f32::NEG_INFINITY, |m, &v| m.max(v.as_f64() as f32));
        }
    }

    let hidden = Var::concat(&hidden_cols, 1)?;
    let (gamma, beta) = match (layer.variant, layer.projection) {
        (TfilmVariant::HiddenCell, _) => (hidden, Var::concat(&cell_cols, 1)?),
        (TfilmVariant::Projected, Some((w, bias))) => {
            let p = w.matmul(&hidden)?.add(&bias.reshape(vec![2 * c, 1])?)?;
            (p.narrow(0, 0, c)?, p.narrow(0, c, c)?)
        }
        (TfilmVariant::Projected, None) => {
            return Err(ModelError::MissingParam("tfilm projection".into()));
        }
    };
    let y = z.mul(&gamma.expand_blocks(b, len)?)?.add(&beta.expand_blocks(b, len)?)?;
    Ok((y, state))
}

/// Single-layer LSTM over a `[I×L]` input from a zero state. Returns the
/// hidden sequence `[H×L]` and the final state.
pub fn lstm_forward<T: Real>(x: &Var<T>, vars: &LstmVars<'_, T>) -> Result<(Var<T>, LstmState), ModelError> {
    let seq = lstm_sequence(x, vars.w_ih, vars.w_hh, vars.b_ih, vars.b_hh)?;
    let h = vars.w_hh.shape()[1];
    let steps = x.shape()[1];
    let mut state = LstmState { h: vec![0.0; h], c: vec![0.0; h] };
    if steps > 0 {
        let d = seq.data();
        for j in 0..h {
            state.h[j] = d[j * steps + steps - 1].as_f64() as f32;
            state.c[j] = d[(h + j) * steps + steps - 1].as_f64() as f32;
        }
    }
    Ok((seq.narrow(0, 0, h)?, state))
}
