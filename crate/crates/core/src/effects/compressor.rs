use serde::{Deserialize, Serialize};

use super::envelope::one_pole_coeff;
use super::EffectError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressorParams {
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub makeup_db: f64,
    pub knee_db: f64,
}

impl Default for CompressorParams {
    fn default() -> Self {
        CompressorParams {
            threshold_db: -24.0,
            ratio: 4.0,
            attack_ms: 5.0,
            release_ms: 250.0,
            makeup_db: 0.0,
            knee_db: 6.0,
        }
    }
}

impl CompressorParams {
    pub fn validate(&self) -> Result<(), EffectError> {
        if !(self.attack_ms > 0.0 && self.release_ms > 0.0) {
            return Err(EffectError::InvalidParams("attack and release must be positive".into()));
        }
        if !(self.ratio >= 1.0) {
            return Err(EffectError::InvalidParams(format!("ratio {} is below 1", self.ratio)));
        }
        if !(self.knee_db >= 0.0) {
            return Err(EffectError::InvalidParams(format!("knee width {} is negative", self.knee_db)));
        }
        if !self.threshold_db.is_finite() || !self.makeup_db.is_finite() {
            return Err(EffectError::InvalidParams("threshold and makeup must be finite".into()));
        }
        Ok(())
    }

    /// Static curve: output level in dB for an input level in dB.
    pub fn static_curve_db(&self, level_db: f64) -> f64 {
        let over = level_db - self.threshold_db;
        let w = self.knee_db;
        if self.ratio == 1.0 || 2.0 * over < -w {
            level_db
        } else if 2.0 * over.abs() <= w && w > 0.0 {
            level_db + (1.0 / self.ratio - 1.0) * (over + w / 2.0).powi(2) / (2.0 * w)
        } else {
            self.threshold_db + over / self.ratio
        }
    }
}

/// Feed-forward compressor. The instantaneous level drives the static
/// curve, and the resulting linear gain is smoothed with attack ballistics
/// while falling and release ballistics while rising.
#[derive(Clone, Debug)]
pub struct Compressor {
    params: CompressorParams,
    attack: f64,
    release: f64,
    makeup: f64,
    gain: f64,
}

impl Compressor {
    pub fn new(params: CompressorParams, sample_rate: f64) -> Result<Self, EffectError> {
        params.validate()?;
        Ok(Compressor {
            attack: one_pole_coeff(params.attack_ms, sample_rate),
            release: one_pole_coeff(params.release_ms, sample_rate),
            makeup: db_to_gain(params.makeup_db),
            gain: 1.0,
            params,
        })
    }

    /// Current smoothed gain, excluding makeup.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let level_db = gain_to_db(x.abs());
        let target = db_to_gain(self.params.static_curve_db(level_db) - level_db);
        let a = if target < self.gain { self.attack } else { self.release };
        self.gain = a * self.gain + (1.0 - a) * target;
        x * self.gain * self.makeup
    }
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Level in dB, floored at −200 dB for silence.
pub fn gain_to_db(g: f64) -> f64 {
    20.0 * g.max(1e-10).log10()
}

/// Compresses a whole buffer from the rest state.
pub fn compress(x: &[f32], params: &CompressorParams, sample_rate: f64) -> Result<Vec<f32>, EffectError> {
    let mut c = Compressor::new(params.clone(), sample_rate)?;
    Ok(x.iter().map(|&v| c.process(v as f64) as f32).collect())
}

/// Smoothed gain (excluding makeup) after every sample.
pub fn compressor_gain_trace(x: &[f32], params: &CompressorParams, sample_rate: f64) -> Result<Vec<f64>, EffectError> {
    let mut c = Compressor::new(params.clone(), sample_rate)?;
    Ok(x.iter()
        .map(|&v| {
            c.process(v as f64);
            c.gain()
        })
        .collect())
}
