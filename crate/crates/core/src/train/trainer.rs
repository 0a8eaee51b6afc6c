use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Model, ModelSpec};
use crate::tensor::{no_grad, Tensor, Var};

use super::checkpoint::{Checkpoint, TrainingState};
use super::dataset::{Segment, TrainData};
use super::loss::{composite_loss, LossConfig, LossParts};
use super::optim::{Adam, AdamConfig};
use super::schedule::{Schedule, ScheduleConfig};
use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub segment_length: usize,
    pub batch_size: usize,
    pub sample_rate: u32,
    pub seed: u64,
    /// Worker threads for batch elements; 0 picks one per core. Results do
    /// not depend on this.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            weight_decay: 1e-4,
            lr_patience: 10,
            lr_factor: 0.5,
            early_stop_patience: 40,
            max_epochs: 2000,
            segment_length: 112_640,
            batch_size: 6,
            sample_rate: 44_100,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.lr_patience > 0
            && self.lr_factor > 0.0
            && self.lr_factor < 1.0
            && self.early_stop_patience > 0
            && self.max_epochs > 0
            && self.segment_length > 0
            && self.batch_size > 0
            && self.sample_rate > 0;
        if positive {
            Ok(())
        } else {
            Err(TrainError::Config(format!("training settings out of range: {self:?}")))
        }
    }

    /// Non-fatal problems with training `spec` under these settings.
    pub fn warnings(&self, spec: &ModelSpec) -> Vec<String> {
        match spec.receptive_field() {
            Ok(rf) if rf > self.segment_length => vec![format!(
                "receptive field of {rf} samples exceeds the {}-sample segments; early outputs see zero padding",
                self.segment_length
            )],
            _ => Vec::new(),
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            lr: self.lr,
            lr_patience: self.lr_patience,
            lr_factor: self.lr_factor,
            early_stop_patience: self.early_stop_patience,
            max_epochs: self.max_epochs,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
    pub val_mrstft: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub best: Checkpoint,
    /// State after the final epoch, including optimizer moments.
    pub last: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// Called after every epoch.
pub type EpochHook<'a> = Box<dyn FnMut(&EpochMetrics) + 'a>;

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where `best.ckpt`, `last.ckpt` and `metrics.csv` go.
    pub out_dir: Option<PathBuf>,
    /// Continue from a checkpoint holding optimizer and schedule state.
    pub resume: Option<Checkpoint>,
    pub on_epoch: Option<EpochHook<'a>>,
}

struct ElementResult {
    parts: LossParts,
    grads: Vec<Tensor<f32>>,
}

fn element_step(model: &Model, seg: &Segment, loss: &LossConfig) -> Result<ElementResult, TrainError> {
    let params = model.vars::<f32>(true);
    let x = Var::constant(Tensor::new(vec![1, seg.len()], seg.input.clone())?);
    let y = Var::constant(Tensor::new(vec![1, seg.len()], seg.target.clone())?);
    let pred = model.forward(&params, &x)?;
    let (total, parts) = composite_loss(&pred, &y, loss)?;
    if !parts.total.is_finite() {
        return Ok(ElementResult { parts, grads: Vec::new() });
    }
    total.backward()?;
    let grads = params.iter().map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))).collect();
    Ok(ElementResult { parts, grads })
}

fn evaluate_segment(model: &Model, seg: &Segment, loss: &LossConfig) -> Result<LossParts, TrainError> {
    no_grad(|| {
        let params = model.vars::<f32>(false);
        let x = Var::constant(Tensor::new(vec![1, seg.len()], seg.input.clone())?);
        let y = Var::constant(Tensor::new(vec![1, seg.len()], seg.target.clone())?);
        let pred = model.forward(&params, &x)?;
        Ok(composite_loss(&pred, &y, loss)?.1)
    })
}

/// Mean validation losses of `model` over `segments`.
pub fn validate(
    model: &Model,
    segments: &[Segment],
    loss: &LossConfig,
    threads: usize,
) -> Result<LossParts, TrainError> {
    let parts = Workers::new(threads).map(segments, |s| evaluate_segment(model, s, loss))?;
    Ok(mean_parts(&parts))
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len().max(1) as f64;
    let sum = parts.iter().fold(LossParts::default(), |a, p| LossParts {
        mae: a.mae + p.mae,
        mrstft: a.mrstft + p.mrstft,
        total: a.total + p.total,
    });
    LossParts { mae: sum.mae / n, mrstft: sum.mrstft / n, total: sum.total / n }
}

/// Runs batch elements, optionally on a dedicated thread pool. Results keep
/// input order.
struct Workers {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    fn new(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool =
                (threads != 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()).flatten();
            Workers { pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Workers {}
        }
    }

    fn map<I: Sync, R: Send>(
        &self,
        items: &[I],
        f: impl Fn(&I) -> Result<R, TrainError> + Sync + Send,
    ) -> Result<Vec<R>, TrainError> {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(f).collect());
        }
        items.iter().map(f).collect()
    }
}

/// Seed of the shuffle for `epoch`.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io { path: path.display().to_string(), source }
}

struct MetricsLog {
    writer: csv::Writer<fs::File>,
}

impl MetricsLog {
    fn open(path: &Path, append: bool) -> Result<Self, TrainError> {
        let exists = append && path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(MetricsLog { writer })
    }

    fn push(&mut self, row: &EpochMetrics) -> Result<(), TrainError> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| TrainError::Io { path: "metrics.csv".into(), source: e })
    }
}

/// Trains `model` with Adam on `data`, evaluating on the validation crops
/// after every epoch. Batch elements are processed independently and their
/// gradients summed in a fixed order, so runs are bit-reproducible for a
/// given seed whatever the thread count.
pub fn train(
    model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    loss: &LossConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss.validate()?;
    let min_len = loss.min_length();
    if let Some(short) = data.train.iter().chain(&data.val).find(|s| s.len() < min_len) {
        return Err(TrainError::Data(format!(
            "a {}-sample segment is shorter than the {min_len}-sample loss frame",
            short.len()
        )));
    }
    let TrainOptions { out_dir, resume, mut on_epoch } = opts;

    let (mut model, mut adam, mut schedule, start_epoch) = match resume {
        Some(ck) => {
            if ck.model.spec() != model.spec() {
                return Err(TrainError::Config("checkpoint spec differs from the requested model".into()));
            }
            let mut adam =
                ck.optimizer.ok_or_else(|| TrainError::Checkpoint("checkpoint has no optimizer state".into()))?;
            adam.config = cfg.adam();
            let mut schedule = ck
                .training
                .schedule
                .ok_or_else(|| TrainError::Checkpoint("checkpoint has no schedule state".into()))?;
            // Counters and the decayed rate carry over; limits come from `cfg`.
            schedule.config = cfg.schedule();
            (ck.model, adam, schedule, ck.training.epoch)
        }
        None => {
            let adam = Adam::new(cfg.adam(), model.params());
            (model, adam, Schedule::new(cfg.schedule()), 0)
        }
    };

    let mut log = match &out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            Some(MetricsLog::open(&dir.join("metrics.csv"), start_epoch > 0)?)
        }
        None => None,
    };
    let mut best_model = match (&out_dir, start_epoch) {
        (Some(dir), e) if e > 0 && dir.join("best.ckpt").exists() => Checkpoint::load(dir.join("best.ckpt"))?.model,
        _ => model.clone(),
    };

    let mut history = Vec::new();
    let mut epoch = start_epoch;
    let mut stop = schedule.epochs >= cfg.max_epochs;
    let workers = Workers::new(cfg.threads);
    while !stop {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let mut train_total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = workers.map(batch, |&i| element_step(&model, &data.train[i], loss))?;
            let scale = 1.0 / batch.len() as f32;
            let mut grads: Vec<Tensor<f32>> =
                model.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            for r in &results {
                if !r.parts.total.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        detail: format!("training loss {} in batch {b}", r.parts.total),
                    });
                }
                train_total += r.parts.total;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v * scale);
                }
            }
            adam.config.lr = schedule.lr;
            let grads: Vec<Option<Tensor<f32>>> = grads.into_iter().map(Some).collect();
            adam.step(model.params_mut(), &grads)?;
        }

        let val = mean_parts(&workers.map(&data.val, |s| evaluate_segment(&model, s, loss))?);
        if !val.total.is_finite() {
            return Err(TrainError::NonFinite { epoch, detail: format!("validation loss {}", val.total) });
        }
        let lr_used = schedule.lr;
        let step = schedule.observe(val.total);
        epoch += 1;
        let row = EpochMetrics {
            epoch,
            train_loss: train_total / data.train.len() as f64,
            val_loss: val.total,
            val_mae: val.mae,
            val_mrstft: val.mrstft,
            lr: lr_used,
        };
        if step.improved {
            best_model = model.clone();
        }
        if let (Some(dir), Some(log)) = (&out_dir, log.as_mut()) {
            log.push(&row)?;
            if step.improved {
                best_checkpoint(&best_model, &schedule, epoch).save(dir.join("best.ckpt"))?;
            }
            last_checkpoint(&model, &adam, &schedule, epoch).save(dir.join("last.ckpt"))?;
        }
        if let Some(cb) = on_epoch.as_mut() {
            cb(&row);
        }
        history.push(row);
        stop = step.stop;
    }

    Ok(TrainOutcome {
        best: best_checkpoint(&best_model, &schedule, epoch),
        last: last_checkpoint(&model, &adam, &schedule, epoch),
        history,
    })
}

fn best_checkpoint(model: &Model, schedule: &Schedule, epoch: usize) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        training: TrainingState {
            epoch: schedule.best_epoch.map_or(epoch, |e| e + 1),
            best_val_loss: schedule.best,
            lr: schedule.lr,
            schedule: None,
            adam: None,
        },
        optimizer: None,
    }
}

fn last_checkpoint(model: &Model, adam: &Adam, schedule: &Schedule, epoch: usize) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        training: TrainingState {
            epoch,
            best_val_loss: schedule.best,
            lr: schedule.lr,
            schedule: Some(schedule.clone()),
            adam: None,
        },
        optimizer: Some(adam.clone()),
    }
}
