//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64`. Each check perturbs input entries by `±step`, evaluates the
//! scalar function twice and compares the difference quotient with the
//! gradient produced by [`Var::backward`].

use super::{Result, Tensor, TensorError, Var};

pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per input: ‖analytic − numeric‖₂ / max(‖numeric‖₂, ‖analytic‖₂).
    pub relative_errors: Vec<f64>,
    /// Number of entries compared per input.
    pub checked: Vec<usize>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares analytic and numeric gradients of `f` with respect to every
/// entry of every input, or an evenly strided subset of at most
/// `max_entries` entries per input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, step: f64, max_entries: Option<usize>) -> Result<GradCheck>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let leaves: Vec<Var<f64>> = inputs.iter().map(|t| Var::parameter(t.clone())).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(TensorError::NotScalar(loss.shape().to_vec()));
    }
    loss.backward()?;

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
        let vars: Vec<Var<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[idx] += delta;
                }
                Var::constant(t)
            })
            .collect();
        Ok(f(&vars)?.data()[0])
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut checked = Vec::with_capacity(inputs.len());
    for (which, (input, leaf)) in inputs.iter().zip(&leaves).enumerate() {
        let n = input.numel();
        let analytic = leaf.grad().map(|g| g.into_data()).unwrap_or_else(|| vec![0.0; n]);
        let stride = match max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let (mut diff, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
        let mut count = 0;
        for idx in (0..n).step_by(stride) {
            let numeric = (eval(which, idx, step)? - eval(which, idx, -step)?) / (2.0 * step);
            diff += (analytic[idx] - numeric).powi(2);
            norm_a += analytic[idx].powi(2);
            norm_n += numeric.powi(2);
            count += 1;
        }
        let scale = norm_a.sqrt().max(norm_n.sqrt());
        relative_errors.push(if scale > 0.0 { diff.sqrt() / scale } else { 0.0 });
        checked.push(count);
    }
    Ok(GradCheck { relative_errors, checked })
}
