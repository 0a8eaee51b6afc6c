//! Chunked causal inference.
//!
//! A [`Streamer`] runs a model over a signal delivered in pieces of any size
//! and produces the same samples as [`Model::infer`] over the whole signal.
//! Each convolution keeps the last `(K−1)·dilation` input samples of every
//! channel, TFiLM layers carry their controller state and the
//! partial block in progress, and the recurrent baseline carries `(h, c)`.
//! Arithmetic follows the offline kernels operation by operation, so the
//! results agree bit for bit.

use crate::nn::{Family, Model, TfilmState, TfilmVariant};
use crate::nn::{LayerSlots, Layout};
use crate::tensor::{lstm_step, LstmWeights};

/// Longest run processed in one pass; larger chunks are split.
const MAX_RUN: usize = 4096;

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Past input samples of one convolution, per channel, followed by room
/// for incoming runs. When the room runs out the last `ctx` samples move
/// back to the front, so every read is a contiguous slice.
#[derive(Clone, Debug, PartialEq)]
struct History {
    channels: usize,
    ctx: usize,
    cap: usize,
    /// `channels × cap`.
    data: Vec<f32>,
    /// End of the valid samples; `data[pos − ctx..pos]` is the context.
    pos: usize,
}

impl History {
    fn new(channels: usize, ctx: usize) -> Self {
        let cap = ctx + ctx.max(MAX_RUN);
        History { channels, ctx, cap, data: vec![0.0; channels * cap], pos: ctx }
    }

    /// Appends `n` samples per channel from `x` (`channels × n`) and
    /// returns the offset of the first of them within each channel row.
    fn append(&mut self, x: &[f32], n: usize) -> usize {
        if self.pos + n > self.cap {
            for ch in 0..self.channels {
                let row = ch * self.cap;
                self.data.copy_within(row + self.pos - self.ctx..row + self.pos, row);
            }
            self.pos = self.ctx;
        }
        let start = self.pos;
        for ch in 0..self.channels {
            self.data[ch * self.cap + start..ch * self.cap + start + n].copy_from_slice(&x[ch * n..(ch + 1) * n]);
        }
        self.pos += n;
        start
    }

    fn row(&self, ch: usize) -> &[f32] {
        &self.data[ch * self.cap..(ch + 1) * self.cap]
    }
}

/// Controller of one TFiLM layer plus the modulation currently applied.
#[derive(Clone, Debug, PartialEq)]
struct TfilmStream {
    state: TfilmState,
    gamma: Vec<f32>,
    beta: Vec<f32>,
    steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerStream {
    history: History,
    tfilm: Option<TfilmStream>,
}

/// Everything a stream carries between chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    layers: Vec<LayerStream>,
    lstm: Option<(Vec<f32>, Vec<f32>)>,
    consumed: u64,
}

impl StreamState {
    /// Samples of history held per channel, summed over convolution layers.
    pub fn context_samples(&self) -> usize {
        self.layers.iter().map(|l| l.history.ctx).sum()
    }

    /// Number of `f32` values held, which does not grow with stream length.
    pub fn len_floats(&self) -> usize {
        let conv: usize = self.layers.iter().map(|l| l.history.data.len()).sum();
        let tfilm: usize = self
            .layers
            .iter()
            .filter_map(|l| l.tfilm.as_ref())
            .map(|t| t.state.h.len() * 3 + t.gamma.len() + t.beta.len())
            .sum();
        let lstm = self.lstm.as_ref().map_or(0, |(h, c)| h.len() + c.len());
        conv + tfilm + lstm
    }

    /// Controller states of the TFiLM layers, in layer order.
    pub fn tfilm_states(&self) -> Vec<&TfilmState> {
        self.layers.iter().filter_map(|l| l.tfilm.as_ref()).map(|t| &t.state).collect()
    }

    /// Completed controller updates per TFiLM layer.
    pub fn controller_steps(&self) -> Vec<u64> {
        self.layers.iter().filter_map(|l| l.tfilm.as_ref()).map(|t| t.steps).collect()
    }

    /// Recurrent baseline `(h, c)`.
    pub fn lstm_state(&self) -> Option<(&[f32], &[f32])> {
        self.lstm.as_ref().map(|(h, c)| (h.as_slice(), c.as_slice()))
    }

    pub fn samples_consumed(&self) -> u64 {
        self.consumed
    }
}

/// A model bound to its streaming state.
#[derive(Clone, Debug)]
pub struct Streamer {
    model: Model,
    state: StreamState,
    block_size: usize,
}

/// Fresh stream over `model`; equivalent to offline zero padding.
pub fn stream_init(model: &Model) -> Streamer {
    Streamer::new(model.clone())
}

/// Processes one chunk; output has the chunk's length.
pub fn stream_process(streamer: &mut Streamer, chunk: &[f32]) -> Vec<f32> {
    streamer.process(chunk)
}

impl Streamer {
    pub fn new(model: Model) -> Self {
        let spec = model.spec();
        let block_size = spec.tfilm_block_size.unwrap_or(1);
        let (layers, lstm) = match model.layout() {
            Layout::Gcn { layers, .. } => {
                let streams = layers
                    .iter()
                    .map(|s| LayerStream {
                        history: History::new(s.in_channels, (spec.kernel_size - 1) * s.dilation),
                        tfilm: s.tfilm.as_ref().map(|_| {
                            let mut t = TfilmStream {
                                state: TfilmState::new(spec.channels),
                                gamma: vec![0.0; spec.channels],
                                beta: vec![0.0; spec.channels],
                                steps: 0,
                            };
                            modulation(&model, s, &mut t);
                            t
                        }),
                    })
                    .collect();
                (streams, None)
            }
            Layout::Lstm { .. } => {
                let h = spec.hidden_size.unwrap_or(0);
                (Vec::new(), Some((vec![0.0; h], vec![0.0; h])))
            }
        };
        Streamer { state: StreamState { layers, lstm, consumed: 0 }, model, block_size }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    /// Returns to the initial all-zero state.
    pub fn reset(&mut self) {
        *self = Streamer::new(self.model.clone());
    }

    pub fn process(&mut self, chunk: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(chunk.len());
        for run in chunk.chunks(MAX_RUN) {
            match self.model.spec().family {
                Family::Lstm => self.run_lstm(run, &mut out),
                Family::Gcn | Family::Gcntf => self.run_gcn(run, &mut out),
            }
            self.state.consumed += run.len() as u64;
        }
        out
    }

    fn run_lstm(&mut self, x: &[f32], out: &mut Vec<f32>) {
        let Layout::Lstm { w_ih, w_hh, b_ih, b_hh, out_w, out_b } = *self.model.layout() else {
            unreachable!("recurrent layout")
        };
        let p = self.model.params();
        let (h, c) = self.state.lstm.as_mut().expect("recurrent state");
        let nh = h.len();
        let weights = LstmWeights {
            w_ih: p[w_ih].data(),
            w_hh: p[w_hh].data(),
            b_ih: p[b_ih].data(),
            b_hh: p[b_hh].data(),
            input: 1,
            hidden: nh,
        };
        let (wo, bo) = (p[out_w].data(), p[out_b].data()[0]);
        let mut gates = vec![0.0f32; 4 * nh];
        for &v in x {
            lstm_step(&weights, &[v], h, c, &mut gates);
            let mut acc = 0.0f32;
            for (&w, &hv) in wo.iter().zip(h.iter()) {
                acc += w * hv;
            }
            out.push(acc + bo + v);
        }
    }

    fn run_gcn(&mut self, x: &[f32], out: &mut Vec<f32>) {
        let Layout::Gcn { layers, out_w, out_b } = self.model.layout() else { unreachable!("convolutional layout") };
        let spec = self.model.spec();
        let (c, k, n) = (spec.channels, spec.kernel_size, x.len());
        let p = self.model.params();

        let mut h = x.to_vec();
        let mut skips: Vec<Vec<f32>> = Vec::with_capacity(layers.len());
        let mut pre = vec![0.0f32; 2 * c * n];
        let mut z = vec![0.0f32; c * n];
        for (slots, stream) in layers.iter().zip(self.state.layers.iter_mut()) {
            let c_in = slots.in_channels;
            let (w, b) = (p[slots.conv_w].data(), p[slots.conv_b].data());
            let start = stream.history.append(&h, n);
            for co in 0..2 * c {
                let row = &mut pre[co * n..(co + 1) * n];
                row.iter_mut().for_each(|v| *v = b[co]);
                for ci in 0..c_in {
                    let past = stream.history.row(ci);
                    for tap in 0..k {
                        let shift = (k - 1 - tap) * slots.dilation;
                        let wv = w[(co * c_in + ci) * k + tap];
                        for (o, &xv) in row.iter_mut().zip(&past[start - shift..start - shift + n]) {
                            *o += wv * xv;
                        }
                    }
                }
            }

            for j in 0..c {
                for t in 0..n {
                    z[j * n + t] = pre[j * n + t].tanh() * sigmoid(pre[(c + j) * n + t]);
                }
            }
            if let Some(tf) = stream.tfilm.as_mut() {
                for t in 0..n {
                    for j in 0..c {
                        let v = z[j * n + t];
                        if v > tf.state.block_max[j] {
                            tf.state.block_max[j] = v;
                        }
                        z[j * n + t] = v * tf.gamma[j] + tf.beta[j];
                    }
                    tf.state.samples_into_block += 1;
                    if tf.state.samples_into_block == self.block_size {
                        controller_step(&self.model, slots, tf);
                    }
                }
            }

            let (mw, mb) = (p[slots.mix_w].data(), p[slots.mix_b].data());
            let mut skip = vec![0.0f32; c * n];
            for co in 0..c {
                let row = &mut skip[co * n..(co + 1) * n];
                row.iter_mut().for_each(|v| *v = mb[co]);
                for ci in 0..c {
                    let wv = mw[co * c + ci];
                    for (o, &zv) in row.iter_mut().zip(&z[ci * n..(ci + 1) * n]) {
                        *o += wv * zv;
                    }
                }
            }
            h = if c_in == c { skip.iter().zip(&h).map(|(&s, &r)| s + r).collect() } else { skip.clone() };
            skips.push(skip);
        }

        let (ow, ob) = (p[*out_w].data(), p[*out_b].data()[0]);
        let mut y = vec![ob; n];
        for (l, skip) in skips.iter().enumerate() {
            for ch in 0..c {
                let wv = ow[l * c + ch];
                for (o, &s) in y.iter_mut().zip(&skip[ch * n..(ch + 1) * n]) {
                    *o += wv * s;
                }
            }
        }
        out.extend_from_slice(&y);
    }
}

/// Feeds the finished block's maxima to the controller and refreshes γ, β.
fn controller_step(model: &Model, slots: &LayerSlots, tf: &mut TfilmStream) {
    let Some(ts) = slots.tfilm.as_ref() else { return };
    let p = model.params();
    let c = tf.state.h.len();
    let weights = LstmWeights {
        w_ih: p[ts.w_ih].data(),
        w_hh: p[ts.w_hh].data(),
        b_ih: p[ts.b_ih].data(),
        b_hh: p[ts.b_hh].data(),
        input: c,
        hidden: c,
    };
    let mut gates = vec![0.0f32; 4 * c];
    let pooled = std::mem::replace(&mut tf.state.block_max, vec![f32::NEG_INFINITY; c]);
    lstm_step(&weights, &pooled, &mut tf.state.h, &mut tf.state.c, &mut gates);
    tf.state.samples_into_block = 0;
    tf.steps += 1;
    modulation(model, slots, tf);
}

fn modulation(model: &Model, slots: &LayerSlots, tf: &mut TfilmStream) {
    match (model.spec().tfilm_variant, slots.tfilm.as_ref().and_then(|t| t.projection)) {
        (TfilmVariant::Projected, Some((w, b))) => {
            let p = model.params();
            let (w, b) = (p[w].data(), p[b].data());
            let c = tf.state.h.len();
            let mut proj = vec![0.0f32; 2 * c];
            for (r, o) in proj.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (&wv, &hv) in w[r * c..(r + 1) * c].iter().zip(&tf.state.h) {
                    acc += wv * hv;
                }
                *o = acc + b[r];
            }
            tf.gamma.copy_from_slice(&proj[..c]);
            tf.beta.copy_from_slice(&proj[c..]);
        }
        _ => {
            tf.gamma.copy_from_slice(&tf.state.h);
            tf.beta.copy_from_slice(&tf.state.c);
        }
    }
}

#[cfg(test)]
mod tests;
