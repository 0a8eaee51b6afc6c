//! Fused single-layer LSTM recurrence.
//!
//! Gate layout follows the common (input, forget, cell, output) ordering with
//! separate input-hidden and hidden-hidden biases.

use super::graph::Op;
use super::ops::sigmoid;
use super::{Real, Result, Tensor, TensorError, Var};

/// Borrowed LSTM weights: `w_ih` is `[4H×I]`, `w_hh` is `[4H×H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    pub w_ih: &'a [T],
    pub w_hh: &'a [T],
    pub b_ih: &'a [T],
    pub b_hh: &'a [T],
    pub input: usize,
    pub hidden: usize,
}

/// Advances `(h, c)` by one step. `gates` receives the activated
/// (i, f, g, o) values, `4H` entries.
pub fn lstm_step<T: Real>(w: &LstmWeights<'_, T>, x: &[T], h: &mut [T], c: &mut [T], gates: &mut [T]) {
    let (ni, nh) = (w.input, w.hidden);
    for (r, gate) in gates.iter_mut().enumerate().take(4 * nh) {
        let mut acc = w.b_ih[r] + w.b_hh[r];
        let wi = &w.w_ih[r * ni..(r + 1) * ni];
        for (&a, &b) in wi.iter().zip(x) {
            acc = acc + a * b;
        }
        let wh = &w.w_hh[r * nh..(r + 1) * nh];
        for (&a, &b) in wh.iter().zip(h.iter()) {
            acc = acc + a * b;
        }
        *gate = acc;
    }
    for j in 0..nh {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[nh + j]);
        let g = gates[2 * nh + j].tanh();
        let o = sigmoid(gates[3 * nh + j]);
        gates[j] = i;
        gates[nh + j] = f;
        gates[2 * nh + j] = g;
        gates[3 * nh + j] = o;
        c[j] = f * c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}

pub(crate) struct LstmSaved<T: Real> {
    x: Var<T>,
    w_ih: Var<T>,
    w_hh: Var<T>,
    b_ih: Var<T>,
    b_hh: Var<T>,
    hidden: usize,
    /// Time-major copy of the input, `S×I`.
    xt: Vec<T>,
    /// Activated gates per step, `S×4H`.
    gates: Vec<T>,
    /// tanh of the cell state per step, `S×H`.
    tanh_c: Vec<T>,
}

impl<T: Real> LstmSaved<T> {
    pub(crate) fn parents(&self) -> Vec<&Var<T>> {
        vec![&self.x, &self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }
}

/// Runs an LSTM from a zero state over the columns of `x` (`[I×S]`).
/// Returns `[2H×S]`: rows `0..H` hold the hidden state after each step and
/// rows `H..2H` the cell state.
pub fn lstm_sequence<T: Real>(
    x: &Var<T>,
    w_ih: &Var<T>,
    w_hh: &Var<T>,
    b_ih: &Var<T>,
    b_hh: &Var<T>,
) -> Result<Var<T>> {
    let &[ni, steps] = x.shape() else {
        return Err(TensorError::invalid("lstm", format!("input shape {:?}", x.shape())));
    };
    let &[rows, wi] = w_ih.shape() else {
        return Err(TensorError::invalid("lstm", format!("w_ih shape {:?}", w_ih.shape())));
    };
    let nh = rows / 4;
    if rows % 4 != 0 || wi != ni || w_hh.shape() != [rows, nh] || b_ih.shape() != [rows] || b_hh.shape() != [rows] {
        return Err(TensorError::invalid(
            "lstm",
            format!(
                "inconsistent weights: x {:?}, w_ih {:?}, w_hh {:?}, b_ih {:?}, b_hh {:?}",
                x.shape(),
                w_ih.shape(),
                w_hh.shape(),
                b_ih.shape(),
                b_hh.shape()
            ),
        ));
    }
    let weights = LstmWeights {
        w_ih: w_ih.data(),
        w_hh: w_hh.data(),
        b_ih: b_ih.data(),
        b_hh: b_hh.data(),
        input: ni,
        hidden: nh,
    };
    let xd = x.data();
    let mut xt = vec![T::zero(); steps * ni];
    for i in 0..ni {
        for t in 0..steps {
            xt[t * ni + i] = xd[i * steps + t];
        }
    }
    let mut h = vec![T::zero(); nh];
    let mut c = vec![T::zero(); nh];
    let mut gates = vec![T::zero(); steps * 4 * nh];
    let mut tanh_c = vec![T::zero(); steps * nh];
    let mut out = vec![T::zero(); 2 * nh * steps];
    for t in 0..steps {
        let g = &mut gates[t * 4 * nh..(t + 1) * 4 * nh];
        lstm_step(&weights, &xt[t * ni..(t + 1) * ni], &mut h, &mut c, g);
        for j in 0..nh {
            out[j * steps + t] = h[j];
            out[(nh + j) * steps + t] = c[j];
            tanh_c[t * nh + j] = c[j].tanh();
        }
    }
    let value = Tensor::new(vec![2 * nh, steps], out)?;
    Ok(Var::from_op(
        value,
        Op::Lstm(Box::new(LstmSaved {
            x: x.clone(),
            w_ih: w_ih.clone(),
            w_hh: w_hh.clone(),
            b_ih: b_ih.clone(),
            b_hh: b_hh.clone(),
            hidden: nh,
            xt,
            gates,
            tanh_c,
        })),
    ))
}

pub(crate) fn backward<T: Real>(s: &LstmSaved<T>, out: &Tensor<T>, g: &[T]) {
    let nh = s.hidden;
    let ni = s.x.shape()[0];
    let steps = s.x.shape()[1];
    let seq = out.data();
    let w_ih = s.w_ih.data();
    let w_hh = s.w_hh.data();
    let one = T::one();

    let mut dw_ih = vec![T::zero(); 4 * nh * ni];
    let mut dw_hh = vec![T::zero(); 4 * nh * nh];
    let mut db = vec![T::zero(); 4 * nh];
    let mut dx = vec![T::zero(); ni * steps];
    let mut dh_next = vec![T::zero(); nh];
    let mut dc_next = vec![T::zero(); nh];
    let mut da = vec![T::zero(); 4 * nh];
    let mut h_prev = vec![T::zero(); nh];

    for t in (0..steps).rev() {
        let gates = &s.gates[t * 4 * nh..(t + 1) * 4 * nh];
        for j in 0..nh {
            h_prev[j] = if t > 0 { seq[j * steps + t - 1] } else { T::zero() };
        }
        for j in 0..nh {
            let (i, f, gg, o) = (gates[j], gates[nh + j], gates[2 * nh + j], gates[3 * nh + j]);
            let tc = s.tanh_c[t * nh + j];
            let c_prev = if t > 0 { seq[(nh + j) * steps + t - 1] } else { T::zero() };
            let dh = g[j * steps + t] + dh_next[j];
            let dc = g[(nh + j) * steps + t] + dc_next[j] + dh * o * (one - tc * tc);
            da[j] = dc * gg * i * (one - i);
            da[nh + j] = dc * c_prev * f * (one - f);
            da[2 * nh + j] = dc * i * (one - gg * gg);
            da[3 * nh + j] = dh * tc * o * (one - o);
            dc_next[j] = dc * f;
        }
        let xt = &s.xt[t * ni..(t + 1) * ni];
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..4 * nh {
            let a = da[r];
            db[r] = db[r] + a;
            let wi = &w_ih[r * ni..(r + 1) * ni];
            for i in 0..ni {
                dw_ih[r * ni + i] = dw_ih[r * ni + i] + a * xt[i];
                dx[i * steps + t] = dx[i * steps + t] + wi[i] * a;
            }
            let wh = &w_hh[r * nh..(r + 1) * nh];
            for j in 0..nh {
                dw_hh[r * nh + j] = dw_hh[r * nh + j] + a * h_prev[j];
                dh_next[j] = dh_next[j] + wh[j] * a;
            }
        }
    }
    s.x.accumulate(dx);
    s.w_ih.accumulate(dw_ih);
    s.w_hh.accumulate(dw_hh);
    s.b_ih.accumulate(db.clone());
    s.b_hh.accumulate(db);
}
