//! Primitive differentiable operations and their backward rules.

use super::graph::{Broadcast, Op};
use super::{lstm, numel, stft, Real, Result, Tensor, TensorError, Var, LOG_EPS};

/// Logistic function shared by every execution path.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn broadcast_inner(big: &[usize], small: &[usize]) -> Option<usize> {
    let total = numel(big);
    if numel(small) == 1 {
        return Some(total);
    }
    if big.len() != small.len() {
        return None;
    }
    // Leading dims must agree and the remaining suffix of `small` be all ones.
    let mut split = small.len();
    while split > 0 && small[split - 1] == 1 {
        split -= 1;
    }
    if small[..split] != big[..split] {
        return None;
    }
    Some(numel(&big[split..]))
}

fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Broadcast, Vec<usize>)> {
    if a == b {
        return Ok((Broadcast::Same, a.to_vec()));
    }
    if let Some(inner) = broadcast_inner(a, b) {
        return Ok((Broadcast::Right(inner), a.to_vec()));
    }
    if let Some(inner) = broadcast_inner(b, a) {
        return Ok((Broadcast::Left(inner), b.to_vec()));
    }
    Err(TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() })
}

#[inline]
fn pair_index(bc: Broadcast, i: usize) -> (usize, usize) {
    match bc {
        Broadcast::Same => (i, i),
        Broadcast::Right(inner) => (i, i / inner),
        Broadcast::Left(inner) => (i / inner, i),
    }
}

fn binary<T: Real>(
    name: &'static str,
    a: &Var<T>,
    b: &Var<T>,
    f: impl Fn(T, T) -> T,
) -> Result<(Tensor<T>, Broadcast)> {
    let (bc, shape) = resolve(name, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let n = numel(&shape);
    let data = match bc {
        Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        _ => (0..n)
            .map(|i| {
                let (ia, ib) = pair_index(bc, i);
                f(ad[ia], bd[ib])
            })
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, bc))
}

fn binary_grads<T: Real>(
    a: &Var<T>,
    b: &Var<T>,
    bc: Broadcast,
    g: &[T],
    da: impl Fn(usize, usize, T) -> T,
    db: impl Fn(usize, usize, T) -> T,
) {
    if a.requires_grad() {
        let mut out = vec![T::zero(); a.numel()];
        for (i, &gi) in g.iter().enumerate() {
            let (ia, ib) = pair_index(bc, i);
            out[ia] = out[ia] + da(ia, ib, gi);
        }
        a.accumulate(out);
    }
    if b.requires_grad() {
        let mut out = vec![T::zero(); b.numel()];
        for (i, &gi) in g.iter().enumerate() {
            let (ia, ib) = pair_index(bc, i);
            out[ib] = out[ib] + db(ia, ib, gi);
        }
        b.accumulate(out);
    }
}

fn unary<T: Real>(x: &Var<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor { shape: x.shape().to_vec(), data: x.data().iter().map(|&v| f(v)).collect() }
}

fn matrix_dims(op: &'static str, v: &Var<impl Real>) -> Result<(usize, usize)> {
    match v.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::invalid(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

impl<T: Real> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let (v, bc) = binary("add", self, other, |a, b| a + b)?;
        Ok(Var::from_op(v, Op::Add(self.clone(), other.clone(), bc)))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let (v, bc) = binary("sub", self, other, |a, b| a - b)?;
        Ok(Var::from_op(v, Op::Sub(self.clone(), other.clone(), bc)))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (v, bc) = binary("mul", self, other, |a, b| a * b)?;
        Ok(Var::from_op(v, Op::Mul(self.clone(), other.clone(), bc)))
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        let (v, bc) = binary("div", self, other, |a, b| a / b)?;
        Ok(Var::from_op(v, Op::Div(self.clone(), other.clone(), bc)))
    }

    pub fn scale(&self, factor: T) -> Var<T> {
        Var::from_op(unary(self, |v| v * factor), Op::Scale(self.clone(), factor))
    }

    pub fn sigmoid(&self) -> Var<T> {
        Var::from_op(unary(self, sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn tanh(&self) -> Var<T> {
        Var::from_op(unary(self, |v| v.tanh()), Op::Tanh(self.clone()))
    }

    pub fn abs(&self) -> Var<T> {
        Var::from_op(unary(self, |v| v.abs()), Op::Abs(self.clone()))
    }

    /// Natural logarithm with inputs floored at [`LOG_EPS`].
    pub fn log(&self) -> Var<T> {
        let eps = T::of(LOG_EPS);
        Var::from_op(unary(self, |v| v.max(eps).ln()), Op::Log(self.clone()))
    }

    pub fn sqrt(&self) -> Var<T> {
        Var::from_op(unary(self, |v| v.sqrt()), Op::Sqrt(self.clone()))
    }

    pub fn square(&self) -> Var<T> {
        Var::from_op(unary(self, |v| v * v), Op::Square(self.clone()))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Var<T> {
        let s = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        Var::from_op(Tensor::scalar(s), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Var<T> {
        let s = self.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let m = s / T::of(self.numel() as f64);
        Var::from_op(Tensor::scalar(m), Op::Mean(self.clone()))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let v = self.value().clone().reshape(shape)?;
        Ok(Var::from_op(v, Op::Reshape(self.clone())))
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (m, k) = matrix_dims("matmul", self)?;
        let (k2, n) = matrix_dims("matmul", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let out = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Var::from_op(Tensor::new(vec![m, n], out)?, Op::Matmul(self.clone(), other.clone())))
    }

    /// Causal dilated convolution over `[C_in×L]` with weights
    /// `[C_out×C_in×K]` and bias `[C_out]`. The input is left-padded with
    /// `(K−1)·dilation` zeros so the output keeps length `L`.
    pub fn conv1d_causal(&self, w: &Var<T>, b: &Var<T>, dilation: usize) -> Result<Var<T>> {
        let (c_in, len) = matrix_dims("conv1d", self)?;
        let &[c_out, w_in, k] = w.shape() else {
            return Err(TensorError::invalid("conv1d", format!("weight shape {:?}", w.shape())));
        };
        if dilation == 0 || k == 0 {
            return Err(TensorError::invalid("conv1d", "dilation and kernel size must be ≥ 1"));
        }
        if w_in != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = conv1d_raw(self.data(), w.data(), b.data(), c_in, c_out, k, len, dilation);
        Ok(Var::from_op(
            Tensor::new(vec![c_out, len], out)?,
            Op::Conv1d { x: self.clone(), w: w.clone(), b: b.clone(), dilation },
        ))
    }

    /// Per-channel maxima over non-overlapping windows of `pool` samples.
    pub fn maxpool1d(&self, pool: usize) -> Result<Var<T>> {
        let (c, len) = matrix_dims("maxpool1d", self)?;
        if pool == 0 || len % pool != 0 {
            return Err(TensorError::invalid(
                "maxpool1d",
                format!("length {len} is not a multiple of pool size {pool}"),
            ));
        }
        let t = len / pool;
        let x = self.data();
        let mut out = Vec::with_capacity(c * t);
        let mut argmax = Vec::with_capacity(c * t);
        for ch in 0..c {
            for blk in 0..t {
                let base = ch * len + blk * pool;
                let mut best = base;
                for i in base + 1..base + pool {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        Ok(Var::from_op(Tensor::new(vec![c, t], out)?, Op::MaxPool { x: self.clone(), argmax }))
    }

    /// Slice `len` entries starting at `start` along `dim`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if dim >= shape.len() || start + len > shape[dim] {
            return Err(TensorError::invalid(
                "narrow",
                format!("range {start}..{} out of bounds for dim {dim} of {shape:?}", start + len),
            ));
        }
        let outer = numel(&shape[..dim]);
        let mid = shape[dim];
        let inner = numel(&shape[dim + 1..]);
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[dim] = len;
        Ok(Var::from_op(Tensor::new(out_shape, data)?, Op::Narrow { x: self.clone(), dim, start }))
    }

    /// Concatenates tensors along `dim`; other dimensions must agree.
    pub fn concat(parts: &[Var<T>], dim: usize) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let shape = first.shape();
        if dim >= shape.len() {
            return Err(TensorError::invalid("concat", format!("dim {dim} for shape {shape:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != shape.len() || s[..dim] != shape[..dim] || s[dim + 1..] != shape[dim + 1..] {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: shape.to_vec(), rhs: s.to_vec() });
            }
            total += s[dim];
        }
        let outer = numel(&shape[..dim]);
        let inner = numel(&shape[dim + 1..]);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[dim] * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[dim] = total;
        Ok(Var::from_op(Tensor::new(out_shape, data)?, Op::Concat { parts: parts.to_vec(), dim }))
    }

    /// Repeats each column of `[C×T]` over `block` samples, truncated to `len`.
    pub fn expand_blocks(&self, block: usize, len: usize) -> Result<Var<T>> {
        let (c, t) = matrix_dims("expand_blocks", self)?;
        if block == 0 || t != len.div_ceil(block) {
            return Err(TensorError::invalid(
                "expand_blocks",
                format!("{t} blocks of {block} cannot cover {len} samples"),
            ));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(c * len);
        for ch in 0..c {
            data.extend((0..len).map(|i| x[ch * t + i / block]));
        }
        Ok(Var::from_op(Tensor::new(vec![c, len], data)?, Op::ExpandBlocks { x: self.clone(), block }))
    }
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// Output `[c_out × len]`. Each output sample accumulates bias first, then
/// input channels in order and taps from oldest to newest; the streaming
/// engine reproduces this order exactly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_raw<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    c_in: usize,
    c_out: usize,
    k: usize,
    len: usize,
    dilation: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); c_out * len];
    for co in 0..c_out {
        let row = &mut out[co * len..(co + 1) * len];
        row.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..c_in {
            let xrow = &x[ci * len..(ci + 1) * len];
            for tap in 0..k {
                let shift = (k - 1 - tap) * dilation;
                if shift >= len {
                    continue;
                }
                let wv = w[(co * c_in + ci) * k + tap];
                for (o, &xv) in row[shift..].iter_mut().zip(xrow) {
                    *o = *o + wv * xv;
                }
            }
        }
    }
    out
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (aa, bb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + aa[l] * bb[l];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |s, &v| s + v);
    for i in chunks * 8..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

pub(crate) fn backward<T: Real>(op: &Op<T>, out: &Tensor<T>, g: &[T]) {
    match op {
        Op::Add(a, b, bc) => binary_grads(a, b, *bc, g, |_, _, gi| gi, |_, _, gi| gi),
        Op::Sub(a, b, bc) => binary_grads(a, b, *bc, g, |_, _, gi| gi, |_, _, gi| -gi),
        Op::Mul(a, b, bc) => {
            let (ad, bd) = (a.data(), b.data());
            binary_grads(a, b, *bc, g, |_, ib, gi| gi * bd[ib], |ia, _, gi| gi * ad[ia]);
        }
        Op::Div(a, b, bc) => {
            let (ad, bd) = (a.data(), b.data());
            binary_grads(a, b, *bc, g, |_, ib, gi| gi / bd[ib], |ia, ib, gi| -gi * ad[ia] / (bd[ib] * bd[ib]));
        }
        Op::Scale(x, f) => x.accumulate(g.iter().map(|&v| v * *f).collect()),
        Op::Sigmoid(x) => {
            let y = out.data();
            x.accumulate(g.iter().zip(y).map(|(&gi, &s)| gi * s * (T::one() - s)).collect());
        }
        Op::Tanh(x) => {
            let y = out.data();
            x.accumulate(g.iter().zip(y).map(|(&gi, &t)| gi * (T::one() - t * t)).collect());
        }
        Op::Abs(x) => {
            let xd = x.data();
            x.accumulate(g.iter().zip(xd).map(|(&gi, &v)| gi * v.signum_or_zero()).collect());
        }
        Op::Log(x) => {
            let eps = T::of(LOG_EPS);
            let xd = x.data();
            x.accumulate(g.iter().zip(xd).map(|(&gi, &v)| if v > eps { gi / v } else { T::zero() }).collect());
        }
        Op::Sqrt(x) => {
            let y = out.data();
            let two = T::of(2.0);
            x.accumulate(
                g.iter().zip(y).map(|(&gi, &s)| if s > T::zero() { gi / (two * s) } else { T::zero() }).collect(),
            );
        }
        Op::Square(x) => {
            let xd = x.data();
            let two = T::of(2.0);
            x.accumulate(g.iter().zip(xd).map(|(&gi, &v)| gi * two * v).collect());
        }
        Op::Sum(x) => x.accumulate(vec![g[0]; x.numel()]),
        Op::Mean(x) => x.accumulate(vec![g[0] / T::of(x.numel() as f64); x.numel()]),
        Op::Reshape(x) => x.accumulate(g.to_vec()),
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                // dA = dY · Bᵀ
                let bd = b.data();
                let mut da = vec![T::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        da[i * k + p] = dot(&g[i * n..(i + 1) * n], &bd[p * n..(p + 1) * n]);
                    }
                }
                a.accumulate(da);
            }
            if b.requires_grad() {
                // dB = Aᵀ · dY
                let ad = a.data();
                let mut db = vec![T::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for (o, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *o = *o + aip * gv;
                        }
                    }
                }
                b.accumulate(db);
            }
        }
        Op::Conv1d { x, w, b, dilation } => conv1d_backward(x, w, b, *dilation, g),
        Op::MaxPool { x, argmax } => {
            let mut gx = vec![T::zero(); x.numel()];
            for (&i, &gi) in argmax.iter().zip(g) {
                gx[i] = gx[i] + gi;
            }
            x.accumulate(gx);
        }
        Op::Narrow { x, dim, start } => {
            let shape = x.shape();
            let outer = numel(&shape[..*dim]);
            let mid = shape[*dim];
            let inner = numel(&shape[dim + 1..]);
            let len = out.shape()[*dim];
            let mut gx = vec![T::zero(); x.numel()];
            for o in 0..outer {
                let dst = (o * mid + start) * inner;
                let src = o * len * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            x.accumulate(gx);
        }
        Op::Concat { parts, dim } => {
            let shape = out.shape();
            let outer = numel(&shape[..*dim]);
            let inner = numel(&shape[dim + 1..]);
            let total = shape[*dim] * inner;
            let mut offset = 0;
            for p in parts {
                let chunk = p.shape()[*dim] * inner;
                if p.requires_grad() {
                    let mut gp = Vec::with_capacity(p.numel());
                    for o in 0..outer {
                        let src = o * total + offset;
                        gp.extend_from_slice(&g[src..src + chunk]);
                    }
                    p.accumulate(gp);
                }
                offset += chunk;
            }
        }
        Op::ExpandBlocks { x, block } => {
            let (c, t) = (x.shape()[0], x.shape()[1]);
            let len = out.shape()[1];
            let mut gx = vec![T::zero(); c * t];
            for ch in 0..c {
                for i in 0..len {
                    let j = ch * t + i / block;
                    gx[j] = gx[j] + g[ch * len + i];
                }
            }
            x.accumulate(gx);
        }
        Op::StftMag(saved) => stft::backward(saved, g),
        Op::Lstm(saved) => lstm::backward(saved, out, g),
    }
}

fn conv1d_backward<T: Real>(x: &Var<T>, w: &Var<T>, b: &Var<T>, dilation: usize, g: &[T]) {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    if b.requires_grad() {
        let gb = (0..c_out).map(|co| g[co * len..(co + 1) * len].iter().fold(T::zero(), |s, &v| s + v)).collect();
        b.accumulate(gb);
    }
    if w.requires_grad() {
        let xd = x.data();
        let mut gw = vec![T::zero(); c_out * c_in * k];
        for co in 0..c_out {
            let grow = &g[co * len..(co + 1) * len];
            for ci in 0..c_in {
                let xrow = &xd[ci * len..(ci + 1) * len];
                for tap in 0..k {
                    let shift = (k - 1 - tap) * dilation;
                    if shift >= len {
                        continue;
                    }
                    gw[(co * c_in + ci) * k + tap] = dot(&grow[shift..], &xrow[..len - shift]);
                }
            }
        }
        w.accumulate(gw);
    }
    if x.requires_grad() {
        let wd = w.data();
        let mut gx = vec![T::zero(); c_in * len];
        for co in 0..c_out {
            let grow = &g[co * len..(co + 1) * len];
            for ci in 0..c_in {
                let xrow = &mut gx[ci * len..(ci + 1) * len];
                for tap in 0..k {
                    let shift = (k - 1 - tap) * dilation;
                    if shift >= len {
                        continue;
                    }
                    let wv = wd[(co * c_in + ci) * k + tap];
                    for (o, &gv) in xrow[..len - shift].iter_mut().zip(&grow[shift..]) {
                        *o = *o + wv * gv;
                    }
                }
            }
        }
        x.accumulate(gx);
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Real> SignumOrZero for T {
    #[inline]
    fn signum_or_zero(self) -> Self {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}
