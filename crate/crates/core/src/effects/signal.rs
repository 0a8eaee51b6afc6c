use std::collections::VecDeque;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::compressor::db_to_gain;
use super::EffectError;
use crate::audio;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    /// Plucked-string notes at random pitches and onsets.
    PluckSynth,
    /// Decaying low-passed noise bursts.
    NoiseBurst,
    /// A recording, looped to the requested duration.
    ExternalWav { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub amplitude_segment_s: f64,
    /// Peak level range in dBFS; each segment draws uniformly in dB.
    pub amplitude_range_db: [f64; 2],
    pub source: Source,
}

impl Default for SignalPlan {
    fn default() -> Self {
        SignalPlan {
            duration_s: 60.0,
            sample_rate: 44_100,
            amplitude_segment_s: 5.0,
            amplitude_range_db: [-30.0, 0.0],
            source: Source::PluckSynth,
        }
    }
}

impl SignalPlan {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn segment_samples(&self) -> usize {
        ((self.amplitude_segment_s * self.sample_rate as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), EffectError> {
        let [lo, hi] = self.amplitude_range_db;
        if !(self.duration_s > 0.0 && self.amplitude_segment_s > 0.0 && self.sample_rate > 0) {
            return Err(EffectError::InvalidParams("duration, segment length and sample rate must be positive".into()));
        }
        if !(lo <= hi && hi <= 0.0) {
            return Err(EffectError::InvalidParams(format!(
                "amplitude range [{lo}, {hi}] dBFS is not ordered or exceeds 0"
            )));
        }
        Ok(())
    }
}

/// Renders the clean signal: raw source normalised to unit peak, then each
/// amplitude segment scaled to a freshly drawn level.
pub fn render(plan: &SignalPlan, seed: u64) -> Result<Vec<f32>, EffectError> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = plan.num_samples();
    let fs = plan.sample_rate as f64;
    let mut raw = match &plan.source {
        Source::PluckSynth => pluck_synth(n, fs, &mut rng),
        Source::NoiseBurst => noise_bursts(n, fs, &mut rng),
        Source::ExternalWav { path } => {
            let buf = audio::read_wav(path)?;
            if buf.sample_rate != plan.sample_rate {
                return Err(EffectError::InvalidParams(format!(
                    "{} is at {} Hz, plan expects {} Hz",
                    path.display(),
                    buf.sample_rate,
                    plan.sample_rate
                )));
            }
            if buf.samples.is_empty() {
                return Err(EffectError::InvalidParams(format!("{} is empty", path.display())));
            }
            buf.samples.iter().cycle().take(n).map(|&v| v as f64).collect()
        }
    };
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        raw.iter_mut().for_each(|v| *v /= peak);
    }
    let [lo, hi] = plan.amplitude_range_db;
    let mut out = Vec::with_capacity(n);
    for seg in raw.chunks(plan.segment_samples()) {
        let g = db_to_gain(if hi > lo { rng.gen_range(lo..=hi) } else { lo });
        out.extend(seg.iter().map(|&v| (v * g) as f32));
    }
    Ok(out)
}

struct Pluck {
    line: VecDeque<f64>,
    decay: f64,
    last: f64,
}

impl Pluck {
    fn tick(&mut self) -> f64 {
        let first = self.line.pop_front().unwrap_or(0.0);
        let next = self.decay * 0.5 * (first + self.last);
        self.last = first;
        self.line.push_back(next);
        first
    }
}

/// Karplus–Strong plucks with up to three ringing voices.
fn pluck_synth(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut voices: VecDeque<Pluck> = VecDeque::new();
    let mut out = Vec::with_capacity(n);
    let mut next_onset = 0usize;
    for t in 0..n {
        if t == next_onset {
            // E2 to E5.
            let semitone = rng.gen_range(0..37) as f64;
            let freq = 82.41 * 2f64.powf(semitone / 12.0);
            let period = ((fs / freq).round() as usize).max(2);
            let strength = rng.gen_range(0.3..1.0);
            let line = (0..period).map(|_| strength * rng.gen_range(-1.0..1.0)).collect();
            voices.push_back(Pluck { line, decay: rng.gen_range(0.990..0.9995), last: 0.0 });
            if voices.len() > 3 {
                voices.pop_front();
            }
            next_onset = t + (rng.gen_range(0.15..1.2) * fs) as usize;
        }
        out.push(voices.iter_mut().map(Pluck::tick).sum());
    }
    out
}

fn noise_bursts(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let (mut level, mut decay, mut lp, mut state) = (0.0f64, 0.0f64, 0.5f64, 0.0f64);
    let mut next_onset = 0usize;
    for t in 0..n {
        if t == next_onset {
            level = rng.gen_range(0.3..1.0);
            decay = super::envelope::one_pole_coeff(rng.gen_range(30.0..600.0), fs);
            lp = rng.gen_range(0.05..0.8);
            next_onset = t + (rng.gen_range(0.1..1.0) * fs) as usize;
        }
        state += lp * (rng.gen_range(-1.0..1.0) - state);
        out.push(level * state);
        level *= decay;
    }
    out
}
