use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam with L2 weight decay added to the gradient before the moment
/// updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor<f32>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update. Every parameter needs a gradient of its own shape.
    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Option<Tensor<f32>>]) -> Result<(), TrainError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TrainError::Optimizer(format!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            match g {
                Some(g) if g.shape() == p.shape() => {}
                Some(g) => {
                    return Err(TrainError::Optimizer(format!(
                        "gradient {i} has shape {:?}, parameter has {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                None => return Err(TrainError::Optimizer(format!("parameter {i} has no gradient"))),
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let g = g.as_ref().map(Tensor::data).unwrap_or_default();
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let w = pd[i] as f64;
                let gi = g[i] as f64 + c.weight_decay * w;
                let mi = c.beta1 * md[i] as f64 + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * vd[i] as f64 + (1.0 - c.beta2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                pd[i] = (w - c.lr * update) as f32;
            }
        }
        Ok(())
    }
}
