use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Result, StftParams, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub stft_resolutions: Vec<StftParams>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            stft_resolutions: [(512, 128, 512), (1024, 256, 1024), (2048, 512, 2048)]
                .into_iter()
                .map(|(fft_size, hop, win_length)| StftParams { fft_size, hop, win_length })
                .collect(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(TensorError::Invalid { op: "loss", msg: format!("alpha {} is negative", self.alpha) });
        }
        if self.stft_resolutions.is_empty() {
            return Err(TensorError::Invalid { op: "loss", msg: "no STFT resolutions".into() });
        }
        self.stft_resolutions.iter().try_for_each(StftParams::validate)
    }

    /// Shortest signal every resolution can frame.
    pub fn min_length(&self) -> usize {
        self.stft_resolutions.iter().map(|p| p.fft_size).max().unwrap_or(0)
    }
}

/// Values of the two loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub mae: f64,
    pub mrstft: f64,
    pub total: f64,
}

fn check_lengths<T: Real>(pred: &Var<T>, target: &Var<T>) -> Result<()> {
    if pred.numel() != target.numel() {
        return Err(TensorError::ShapeMismatch {
            op: "loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae<T: Real>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    check_lengths(pred, target)?;
    let target = target.reshape(pred.shape().to_vec())?;
    Ok(pred.sub(&target)?.abs().mean())
}

/// `‖|Y| − |Ŷ|‖_F / ‖|Y|‖_F` at one resolution.
pub fn spectral_convergence<T: Real>(pred: &Var<T>, target: &Var<T>, params: &StftParams) -> Result<Var<T>> {
    check_lengths(pred, target)?;
    let p = pred.stft_magnitude(params)?;
    let t = target.stft_magnitude(params)?;
    t.sub(&p)?.square().sum().sqrt().div(&t.square().sum().sqrt())
}

/// Spectral convergence plus mean log-magnitude distance at one resolution.
pub fn stft_loss<T: Real>(pred: &Var<T>, target: &Var<T>, params: &StftParams) -> Result<Var<T>> {
    check_lengths(pred, target)?;
    let p = pred.stft_magnitude(params)?;
    let t = target.stft_magnitude(params)?;
    let sc = t.sub(&p)?.square().sum().sqrt().div(&t.square().sum().sqrt())?;
    let log_mag = t.log().sub(&p.log())?.abs().mean();
    sc.add(&log_mag)
}

/// Mean of [`stft_loss`] over the configured resolutions.
pub fn mr_stft<T: Real>(pred: &Var<T>, target: &Var<T>, cfg: &LossConfig) -> Result<Var<T>> {
    let mut total: Option<Var<T>> = None;
    for params in &cfg.stft_resolutions {
        let term = stft_loss(pred, target, params)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| TensorError::Invalid { op: "loss", msg: "no STFT resolutions".into() })?;
    Ok(total.scale(T::of(1.0 / cfg.stft_resolutions.len() as f64)))
}

/// `mae + alpha · mr_stft`, with the component values.
pub fn composite_loss<T: Real>(pred: &Var<T>, target: &Var<T>, cfg: &LossConfig) -> Result<(Var<T>, LossParts)> {
    let l1 = mae(pred, target)?;
    let spectral = mr_stft(pred, target, cfg)?;
    let total = l1.add(&spectral.scale(T::of(cfg.alpha)))?;
    let parts = LossParts {
        mae: l1.value().item().as_f64(),
        mrstft: spectral.value().item().as_f64(),
        total: total.value().item().as_f64(),
    };
    Ok((total, parts))
}
