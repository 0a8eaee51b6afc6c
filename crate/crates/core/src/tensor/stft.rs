//! Short-time Fourier transform magnitudes with an analytic backward pass.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::graph::Op;
use super::{Real, Result, Tensor, TensorError, Var, LOG_EPS};

/// Frame geometry. Frames start at sample 0 and advance by `hop`; only
/// frames lying entirely inside the signal are produced. A window shorter
/// than `fft_size` is centred and zero-padded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl StftParams {
    pub fn new(fft_size: usize, hop: usize, win_length: usize) -> Result<Self> {
        let p = StftParams { fft_size, hop, win_length };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() {
            return Err(TensorError::invalid("stft", format!("fft size {} is not a power of two", self.fft_size)));
        }
        if self.hop == 0 || self.win_length == 0 || self.win_length > self.fft_size {
            return Err(TensorError::invalid(
                "stft",
                format!("hop {} / window {} invalid for fft size {}", self.hop, self.win_length, self.fft_size),
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames(&self, len: usize) -> Result<usize> {
        if len < self.fft_size {
            return Err(TensorError::invalid(
                "stft",
                format!("signal of {len} samples is shorter than one {}-sample frame", self.fft_size),
            ));
        }
        Ok(1 + (len - self.fft_size) / self.hop)
    }

    /// Periodic Hann window of `win_length`, centred in `fft_size`.
    fn padded_window<T: Real>(&self) -> Vec<T> {
        let mut w = vec![T::zero(); self.fft_size];
        let offset = (self.fft_size - self.win_length) / 2;
        for (i, v) in hann_window::<T>(self.win_length).into_iter().enumerate() {
            w[offset + i] = v;
        }
        w
    }
}

/// Periodic Hann window.
pub fn hann_window<T: Real>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
            T::of(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

/// Complex spectrogram, `frames × bins`, of a plain signal.
pub fn stft<T: Real>(x: &[T], params: &StftParams) -> Result<Vec<Vec<Complex<T>>>> {
    params.validate()?;
    let frames = params.frames(x.len())?;
    let window = params.padded_window::<T>();
    let fft = FftPlanner::<T>::new().plan_fft_forward(params.fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); params.fft_size];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = f * params.hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(x[start + n] * window[n], T::zero());
        }
        fft.process(&mut buf);
        out.push(buf[..params.bins()].to_vec());
    }
    Ok(out)
}

pub(crate) struct StftSaved<T: Real> {
    pub(crate) x: Var<T>,
    params: StftParams,
    spectra: Vec<Vec<Complex<T>>>,
}

impl<T: Real> Var<T> {
    /// Magnitude spectrogram `[frames × bins]` of a signal holding all its
    /// samples in one row (`[L]` or `[1×L]`). Magnitudes are floored at
    /// [`LOG_EPS`].
    pub fn stft_magnitude(&self, params: &StftParams) -> Result<Var<T>> {
        if self.shape().len() > 2 || (self.shape().len() == 2 && self.shape()[0] != 1) {
            return Err(TensorError::invalid(
                "stft",
                format!("expected a single-channel signal, got {:?}", self.shape()),
            ));
        }
        let spectra = stft(self.data(), params)?;
        let eps = T::of(LOG_EPS);
        let frames = spectra.len();
        let mut mags = Vec::with_capacity(frames * params.bins());
        for frame in &spectra {
            mags.extend(frame.iter().map(|c| c.norm().max(eps)));
        }
        let value = Tensor::new(vec![frames, params.bins()], mags)?;
        Ok(Var::from_op(value, Op::StftMag(Box::new(StftSaved { x: self.clone(), params: *params, spectra }))))
    }
}

/// d|X_k|/dx_n = w_n·Re(X_k·e^{+jθ})/|X_k|, so the input gradient of a frame
/// is the windowed real part of an unnormalised inverse FFT of g_k·X_k/|X_k|.
pub(crate) fn backward<T: Real>(saved: &StftSaved<T>, g: &[T]) {
    let x = &saved.x;
    if !x.requires_grad() {
        return;
    }
    let p = &saved.params;
    let bins = p.bins();
    let eps = T::of(LOG_EPS);
    let window = p.padded_window::<T>();
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(p.fft_size);
    let mut gx = vec![T::zero(); x.numel()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); p.fft_size];
    for (f, frame) in saved.spectra.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
        for k in 0..bins {
            let mag = frame[k].norm().max(eps);
            buf[k] = frame[k] * (g[f * bins + k] / mag);
        }
        ifft.process(&mut buf);
        let start = f * p.hop;
        for n in 0..p.fft_size {
            gx[start + n] = gx[start + n] + window[n] * buf[n].re;
        }
    }
    x.accumulate(gx);
}
