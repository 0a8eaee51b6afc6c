/// One-pole coefficient whose step response reaches `1 − e⁻¹` after `ms`.
pub fn one_pole_coeff(ms: f64, sample_rate: f64) -> f64 {
    (-1.0 / (sample_rate * ms / 1000.0)).exp()
}

/// Peak envelope follower with separate attack and release ballistics.
#[derive(Clone, Debug)]
pub struct EnvelopeFollower {
    attack: f64,
    release: f64,
    env: f64,
}

impl EnvelopeFollower {
    pub fn new(attack_ms: f64, release_ms: f64, sample_rate: f64) -> Self {
        EnvelopeFollower {
            attack: one_pole_coeff(attack_ms, sample_rate),
            release: one_pole_coeff(release_ms, sample_rate),
            env: 0.0,
        }
    }

    pub fn value(&self) -> f64 {
        self.env
    }

    pub fn reset(&mut self) {
        self.env = 0.0;
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let level = x.abs();
        let a = if level > self.env { self.attack } else { self.release };
        self.env = a * self.env + (1.0 - a) * level;
        self.env
    }
}

/// Envelope of a whole buffer from a zero initial state.
pub fn envelope_follow(x: &[f32], attack_ms: f64, release_ms: f64, sample_rate: f64) -> Vec<f32> {
    let mut follower = EnvelopeFollower::new(attack_ms, release_ms, sample_rate);
    x.iter().map(|&v| follower.process(v as f64) as f32).collect()
}

/// First-order DC blocker, `y[n] = x[n] − x[n−1] + R·y[n−1]`.
#[derive(Clone, Debug)]
pub struct DcBlocker {
    r: f64,
    x1: f64,
    y1: f64,
}

impl DcBlocker {
    pub fn new(cutoff_hz: f64, sample_rate: f64) -> Self {
        DcBlocker { r: (-2.0 * std::f64::consts::PI * cutoff_hz / sample_rate).exp(), x1: 0.0, y1: 0.0 }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = x - self.x1 + self.r * self.y1;
        self.x1 = x;
        self.y1 = y;
        y
    }
}

/// Time in milliseconds for `trace` to cover 63.2% of the way from
/// `trace[start - 1]` to `target`, measured from `start`. Linear
/// interpolation between the two samples bracketing the crossing.
pub fn time_to_63(trace: &[f64], start: usize, target: f64, sample_rate: f64) -> Option<f64> {
    let from = *trace.get(start.checked_sub(1)?)?;
    let level = from + (1.0 - (-1.0f64).exp()) * (target - from);
    let rising = target > from;
    let mut prev = from;
    for (i, &v) in trace.iter().enumerate().skip(start) {
        let crossed = if rising { v >= level } else { v <= level };
        if crossed {
            let frac = (level - prev) / (v - prev);
            let samples = (i - start) as f64 + frac;
            return Some(samples * 1000.0 / sample_rate);
        }
        prev = v;
    }
    None
}
