use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { lr: 5e-3, lr_patience: 10, lr_factor: 0.5, early_stop_patience: 40, max_epochs: 2000 }
    }
}

/// Plateau learning-rate decay and early stopping, driven by validation
/// losses. An epoch improves when its loss is strictly below the best so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub config: ScheduleConfig,
    pub lr: f64,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    /// Non-improving epochs since the last improvement or LR decay.
    pub plateau: usize,
    /// Non-improving epochs since the last improvement.
    pub stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub improved: bool,
    pub lr_decayed: bool,
    pub stop: bool,
}

impl Schedule {
    pub fn new(config: ScheduleConfig) -> Self {
        Schedule { config, lr: config.lr, best: None, best_epoch: None, epochs: 0, plateau: 0, stale: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> Step {
        let epoch = self.epochs;
        self.epochs += 1;
        let improved = self.best.is_none_or(|b| val_loss < b);
        let mut lr_decayed = false;
        if improved {
            self.best = Some(val_loss);
            self.best_epoch = Some(epoch);
            self.plateau = 0;
            self.stale = 0;
        } else {
            self.plateau += 1;
            self.stale += 1;
            if self.plateau >= self.config.lr_patience {
                self.lr *= self.config.lr_factor;
                self.plateau = 0;
                lr_decayed = true;
            }
        }
        let stop = self.stale >= self.config.early_stop_patience || self.epochs >= self.config.max_epochs;
        Step { improved, lr_decayed, stop }
    }
}

/// Learning rate after observing `history`.
pub fn lr_schedule(history: &[f64], config: ScheduleConfig) -> f64 {
    let mut s = Schedule::new(config);
    history.iter().for_each(|&v| {
        s.observe(v);
    });
    s.lr
}

/// Whether training should stop after observing `history`.
pub fn early_stop(history: &[f64], config: ScheduleConfig) -> bool {
    let mut s = Schedule::new(config);
    history.iter().any(|&v| s.observe(v).stop)
}
