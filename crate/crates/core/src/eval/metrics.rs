use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::tensor::{hann_window, StftParams, LOG_EPS};
use crate::train::LossConfig;

fn check(pred: &[f32], target: &[f32]) -> Result<(), EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    Ok(())
}

/// Mean absolute error over all samples.
pub fn l1(pred: &[f32], target: &[f32]) -> Result<f64, EvalError> {
    check(pred, target)?;
    if pred.is_empty() {
        return Err(EvalError::Invalid("no samples to compare".into()));
    }
    let sum: f64 = pred.iter().zip(target).map(|(&p, &t)| (p as f64 - t as f64).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Spectral convergence plus mean log-magnitude distance at one resolution,
/// computed frame by frame in `f64` with the same framing and magnitude
/// floor as the training loss.
pub fn stft_distance(pred: &[f32], target: &[f32], params: &StftParams) -> Result<f64, EvalError> {
    check(pred, target)?;
    params.validate()?;
    let frames = params.frames(pred.len())?;
    let mut window = vec![0.0f64; params.fft_size];
    let offset = (params.fft_size - params.win_length) / 2;
    window[offset..offset + params.win_length].copy_from_slice(&hann_window::<f64>(params.win_length));
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.fft_size);
    let bins = params.bins();
    let mut bp = vec![Complex::new(0.0, 0.0); params.fft_size];
    let mut bt = bp.clone();
    let (mut diff2, mut target2, mut log_abs) = (0.0f64, 0.0f64, 0.0f64);
    for f in 0..frames {
        let start = f * params.hop;
        for n in 0..params.fft_size {
            bp[n] = Complex::new(pred[start + n] as f64 * window[n], 0.0);
            bt[n] = Complex::new(target[start + n] as f64 * window[n], 0.0);
        }
        fft.process(&mut bp);
        fft.process(&mut bt);
        for k in 0..bins {
            let p = bp[k].norm().max(LOG_EPS);
            let t = bt[k].norm().max(LOG_EPS);
            diff2 += (t - p) * (t - p);
            target2 += t * t;
            log_abs += (t.ln() - p.ln()).abs();
        }
    }
    Ok(diff2.sqrt() / target2.sqrt() + log_abs / (frames * bins) as f64)
}

/// Mean of [`stft_distance`] over the resolutions of `cfg`.
pub fn mr_stft_distance(pred: &[f32], target: &[f32], cfg: &LossConfig) -> Result<f64, EvalError> {
    if cfg.stft_resolutions.is_empty() {
        return Err(EvalError::Invalid("no STFT resolutions".into()));
    }
    let mut total = 0.0;
    for params in &cfg.stft_resolutions {
        total += stft_distance(pred, target, params)?;
    }
    Ok(total / cfg.stft_resolutions.len() as f64)
}

/// Errors of one analysis window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowError {
    #[serde(rename = "window_index")]
    pub index: usize,
    #[serde(rename = "start_sample")]
    pub start: usize,
    pub l1: f64,
    pub stft: f64,
}

/// Per-window L1 and single-resolution STFT distance over consecutive
/// windows of `window` samples. A trailing partial window is dropped.
pub fn windowed_errors(
    pred: &[f32],
    target: &[f32],
    window: usize,
    params: &StftParams,
) -> Result<Vec<WindowError>, EvalError> {
    check(pred, target)?;
    if window < params.fft_size {
        return Err(EvalError::Invalid(format!(
            "window of {window} samples is shorter than the {}-point STFT",
            params.fft_size
        )));
    }
    (0..pred.len() / window)
        .map(|i| {
            let r = i * window..(i + 1) * window;
            Ok(WindowError {
                index: i,
                start: r.start,
                l1: l1(&pred[r.clone()], &target[r.clone()])?,
                stft: stft_distance(&pred[r.clone()], &target[r], params)?,
            })
        })
        .collect()
}

/// Linearly interpolated percentile (`q` in `[0, 100]`) of the finite values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Summary of an error series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl SeriesStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        Some(SeriesStats {
            count: finite.len(),
            mean: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            median: percentile(&finite, 50.0)?,
            p95: percentile(&finite, 95.0)?,
            max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Equal-width bins over `[lo, hi]`; values outside land in the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram, EvalError> {
    if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(EvalError::Invalid(format!("histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let i = ((v - lo) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}
