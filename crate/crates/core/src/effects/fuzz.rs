use serde::{Deserialize, Serialize};

use super::envelope::{DcBlocker, EnvelopeFollower};
use super::EffectError;

/// Corner frequency of the output DC blocker.
pub const DC_BLOCK_HZ: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzParams {
    pub gain: f64,
    pub bias_depth: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub volume: f64,
}

impl Default for FuzzParams {
    fn default() -> Self {
        FuzzParams { gain: 30.0, bias_depth: 0.6, attack_ms: 10.0, release_ms: 250.0, volume: 0.5 }
    }
}

impl FuzzParams {
    pub fn validate(&self) -> Result<(), EffectError> {
        if !(self.attack_ms > 0.0 && self.release_ms > 0.0) {
            return Err(EffectError::InvalidParams("attack and release must be positive".into()));
        }
        if !(self.gain > 0.0 && self.volume > 0.0) {
            return Err(EffectError::InvalidParams("gain and volume must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bias_depth) {
            return Err(EffectError::InvalidParams(format!("bias depth {} outside [0, 1]", self.bias_depth)));
        }
        Ok(())
    }
}

/// Envelope-biased tanh clipper. The bias shifts the operating point with
/// the input envelope, which makes the clipping asymmetric and dependent on
/// playing dynamics; subtracting `tanh(bias)` keeps silence silent.
#[derive(Clone, Debug)]
pub struct Fuzz {
    params: FuzzParams,
    env: EnvelopeFollower,
    dc: DcBlocker,
}

impl Fuzz {
    pub fn new(params: FuzzParams, sample_rate: f64) -> Result<Self, EffectError> {
        params.validate()?;
        Ok(Fuzz {
            env: EnvelopeFollower::new(params.attack_ms, params.release_ms, sample_rate),
            dc: DcBlocker::new(DC_BLOCK_HZ, sample_rate),
            params,
        })
    }

    pub fn envelope(&self) -> f64 {
        self.env.value()
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let bias = self.params.bias_depth * self.env.process(x);
        let shaped = (self.params.gain * x + bias).tanh() - bias.tanh();
        self.params.volume * self.dc.process(shaped)
    }
}

pub fn fuzz(x: &[f32], params: &FuzzParams, sample_rate: f64) -> Result<Vec<f32>, EffectError> {
    let mut f = Fuzz::new(params.clone(), sample_rate)?;
    Ok(x.iter().map(|&v| f.process(v as f64) as f32).collect())
}

/// Bias-driving envelope after every sample.
pub fn fuzz_envelope_trace(x: &[f32], params: &FuzzParams, sample_rate: f64) -> Result<Vec<f64>, EffectError> {
    let mut f = Fuzz::new(params.clone(), sample_rate)?;
    Ok(x.iter()
        .map(|&v| {
            f.process(v as f64);
            f.envelope()
        })
        .collect())
}
