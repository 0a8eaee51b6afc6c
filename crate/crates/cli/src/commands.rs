use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use tfilm_fx::audio::{read_wav, write_wav, AudioBuffer, WavFormat, SAMPLE_RATE};
use tfilm_fx::effects::{
    synthesize_corpus, CompressorParams, DatasetManifest, EffectParams, FuzzParams, SignalPlan, Source, Split,
};
use tfilm_fx::eval::{
    compare, evaluate_manifest, histogram, write_summary_csv, write_windowed_csv, EvalReport, SeriesStats,
};
use tfilm_fx::nn::{Family, Model, ModelError, ModelSpec};
use tfilm_fx::stream::Streamer;
use tfilm_fx::train::{train as run_training, Checkpoint, TrainData, TrainOptions};

use crate::config::{preset_name, resolve_seed, ExperimentConfig, ModelArgs};
use crate::{out_dir, UsageError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EffectArg {
    Fuzz,
    Compressor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Pluck,
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pcm16,
    Float32,
}

#[derive(Args)]
pub struct DatagenArgs {
    #[arg(long, value_enum)]
    effect: EffectArg,
    /// Attack time in ms (effect default when omitted).
    #[arg(long)]
    attack_ms: Option<f64>,
    /// Release time in ms (effect default when omitted).
    #[arg(long)]
    release_ms: Option<f64>,
    /// Total length; split in half for training and quarters for val/test.
    #[arg(long, default_value_t = 1.0)]
    minutes: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SourceArg::Pluck)]
    source: SourceArg,
    /// Loop this recording instead of synthesising a source.
    #[arg(long)]
    input_wav: Option<PathBuf>,
    /// Length of each constant-level stretch in seconds.
    #[arg(long, default_value_t = 5.0)]
    segment_s: f64,
    #[arg(long, default_value_t = -30.0, allow_hyphen_values = true)]
    min_db: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    max_db: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn datagen(a: DatagenArgs) -> Result<()> {
    let out = out_dir(a.out)?;
    let seed = resolve_seed(a.seed, None)?;
    let (kind, da, dr) = match a.effect {
        EffectArg::Fuzz => {
            let d = FuzzParams::default();
            ("fuzz", d.attack_ms, d.release_ms)
        }
        EffectArg::Compressor => {
            let d = CompressorParams::default();
            ("compressor", d.attack_ms, d.release_ms)
        }
    };
    let effect = EffectParams::with_times(kind, a.attack_ms.unwrap_or(da), a.release_ms.unwrap_or(dr))
        .map_err(|e| UsageError(e.to_string()))?;
    let source = match (a.input_wav, a.source) {
        (Some(path), _) => Source::ExternalWav { path },
        (None, SourceArg::Pluck) => Source::PluckSynth,
        (None, SourceArg::Noise) => Source::NoiseBurst,
    };
    let plan = SignalPlan {
        duration_s: a.minutes * 60.0,
        sample_rate: SAMPLE_RATE,
        amplitude_segment_s: a.segment_s,
        amplitude_range_db: [a.min_db, a.max_db],
        source,
    };
    plan.validate().map_err(|e| UsageError(e.to_string()))?;
    let manifest = synthesize_corpus(&plan, &effect, seed, &out)?;
    let minutes = |s: Split| manifest.duration_s(s) / 60.0;
    println!(
        "{} corpus in {}: train {:.2} min, val {:.2} min, test {:.2} min (seed {seed})",
        kind,
        out.display(),
        minutes(Split::Train),
        minutes(Split::Val),
        minutes(Split::Test)
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Corpus manifest written by `datagen`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Default 2000.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Initial Adam learning rate, default 5e-3.
    #[arg(long)]
    lr: Option<f64>,
    /// Segments per optimizer step, default 6.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training crop length in samples, default 112640.
    #[arg(long)]
    segment_length: Option<usize>,
    /// Stop after this many epochs without improvement, default 40.
    #[arg(long)]
    early_stop_patience: Option<usize>,
    /// Halve the learning rate after this many flat epochs, default 10.
    #[arg(long)]
    lr_patience: Option<usize>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Continue from a `last.ckpt`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load_or_default(a.config.as_deref())?;
    let spec = a.model.resolve(cfg.model.as_ref())?;
    cfg.model = Some(crate::config::ModelChoice::Spec(spec.clone()));
    let seed = resolve_seed(a.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    let t = &mut cfg.train;
    for (slot, flag) in [
        (&mut t.max_epochs, a.max_epochs),
        (&mut t.batch_size, a.batch_size),
        (&mut t.segment_length, a.segment_length),
        (&mut t.early_stop_patience, a.early_stop_patience),
        (&mut t.lr_patience, a.lr_patience),
        (&mut t.threads, a.threads),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    t.validate().map_err(|e| UsageError(e.to_string()))?;
    cfg.loss.validate().map_err(|e| UsageError(e.to_string()))?;
    if a.dataset.is_some() {
        cfg.dataset = a.dataset;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let dataset = cfg
        .dataset
        .clone()
        .ok_or_else(|| UsageError("no dataset given; pass --dataset path/to/manifest.json".into()))?;
    let out = out_dir(cfg.out.clone())?;

    let manifest = DatasetManifest::load(&dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    if manifest.sample_rate != cfg.train.sample_rate {
        bail!("dataset is at {} Hz but training runs at {} Hz", manifest.sample_rate, cfg.train.sample_rate);
    }
    let data = TrainData::from_manifest(&manifest, cfg.train.segment_length, cfg.loss.min_length())?;
    for w in cfg.train.warnings(&spec) {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut resolved = serde_json::to_string_pretty(&cfg)?;
    resolved.push('\n');
    fs::write(out.join("config.json"), resolved)
        .with_context(|| format!("writing {}", out.join("config.json").display()))?;

    let resume = match &a.resume {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let model = Model::new(spec.clone(), seed)?;
    eprintln!(
        "training {} ({} params) on {} train / {} val segments",
        describe(&spec),
        model.num_params(),
        data.train.len(),
        data.val.len()
    );
    let outcome = run_training(
        model,
        &data,
        &cfg.train,
        &cfg.loss,
        TrainOptions {
            out_dir: Some(out.clone()),
            resume,
            on_epoch: Some(Box::new(|m| {
                eprintln!(
                    "epoch {:>4}  train {:.5}  val {:.5}  (l1 {:.5}, mr-stft {:.5})  lr {:.2e}",
                    m.epoch, m.train_loss, m.val_loss, m.val_mae, m.val_mrstft, m.lr
                )
            })),
        },
    )?;
    println!(
        "best val loss {:.6} at epoch {}; checkpoints in {}",
        outcome.best.training.best_val_loss.unwrap_or(f64::NAN),
        outcome.best.training.epoch,
        out.display()
    );
    Ok(())
}

fn describe(spec: &ModelSpec) -> String {
    if let Some(name) = preset_name(spec) {
        return name.to_string();
    }
    let family = format!("{:?}", spec.family).to_lowercase();
    match (spec.family, spec.tfilm_block_size) {
        (Family::Lstm, _) => format!("lstm-{}", spec.hidden_size.unwrap_or(0)),
        (_, Some(b)) if spec.has_tfilm() => {
            format!("{family}-l{}-k{}-d{}-c{}-b{b}", spec.layers, spec.kernel_size, spec.dilation_growth, spec.channels)
        }
        _ => format!("{family}-l{}-k{}-d{}-c{}", spec.layers, spec.kernel_size, spec.dilation_growth, spec.channels),
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to score; repeat to compare several.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Row label per checkpoint (defaults to the preset name).
    #[arg(long = "name")]
    names: Vec<String>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Histogram bins for the windowed errors.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let out = out_dir(a.out)?;
    if !a.names.is_empty() && a.names.len() != a.checkpoints.len() {
        return Err(UsageError(format!("{} names for {} checkpoints", a.names.len(), a.checkpoints.len())).into());
    }
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let manifest =
        DatasetManifest::load(&a.dataset).with_context(|| format!("loading dataset {}", a.dataset.display()))?;
    let loss = tfilm_fx::train::LossConfig::default();
    let mut reports: Vec<EvalReport> = Vec::new();
    for (i, path) in a.checkpoints.iter().enumerate() {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let mut name = a.names.get(i).cloned().unwrap_or_else(|| describe(ck.model.spec()));
        let base = name.clone();
        let mut n = 2;
        while reports.iter().any(|r| r.model == name) {
            name = format!("{base}#{n}");
            n += 1;
        }
        let report = evaluate_manifest(&ck.model, &name, Some(path.display().to_string()), &manifest, split, &loss)?;
        reports.push(report);
    }

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let rows = compare(&reports);
    write_summary_csv(&rows, out.join("summary.csv"))?;
    let top = |f: fn(&EvalReport) -> Vec<f64>| {
        reports.iter().flat_map(f).filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE)
    };
    let (l1_max, stft_max) = (top(EvalReport::window_l1), top(EvalReport::window_stft));
    for r in &reports {
        let dir = out.join(sanitize(&r.model));
        write_windowed_csv(&r.windows, dir.join("windowed.csv"))?;
        let mut hist = String::from("metric,bin_lo,bin_hi,count\n");
        for (metric, values, hi) in [("l1", r.window_l1(), l1_max), ("stft", r.window_stft(), stft_max)] {
            let h = histogram(&values, 0.0, hi, a.bins.max(1))?;
            for (i, c) in h.counts.iter().enumerate() {
                hist.push_str(&format!("{metric},{},{},{c}\n", h.edges[i], h.edges[i + 1]));
            }
        }
        fs::write(dir.join("histogram.csv"), hist)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(r)? + "\n")?;
    }

    println!("{:<16} {:>8} {:>10} {:>10} {:>10} {:>10}", "model", "params", "L1", "MR-STFT", "med L1", "p95 L1");
    for row in &rows {
        let r = reports.iter().find(|r| r.model == row.model).expect("row from report");
        let stats = SeriesStats::of(&r.window_l1());
        println!(
            "{:<16} {:>8} {:>10.5} {:>10.5} {:>10} {:>10}{}",
            row.model,
            row.params,
            row.l1,
            row.mrstft,
            stats.map_or("-".into(), |s| format!("{:.5}", s.median)),
            stats.map_or("-".into(), |s| format!("{:.5}", s.p95)),
            if row.best_flag { "  *" } else { "" }
        );
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// Weights from a checkpoint, or freshly initialised from a preset.
#[derive(Args)]
pub struct ModelSource {
    #[arg(long, conflicts_with = "model")]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Initialisation seed when no checkpoint is given.
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelSource {
    fn load(&self) -> Result<Model> {
        match &self.checkpoint {
            Some(path) => {
                if self.model.is_set() {
                    return Err(UsageError("--checkpoint already fixes the architecture".into()).into());
                }
                Ok(Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?.model)
            }
            None => {
                let spec = self.model.resolve(None)?;
                Ok(Model::new(spec, resolve_seed(self.seed, None)?)?)
            }
        }
    }
}

#[derive(Args)]
pub struct ProcessArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Stream the file in chunks of this many samples.
    #[arg(long)]
    chunked: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Float32)]
    format: FormatArg,
}

fn wav_format(f: FormatArg) -> WavFormat {
    match f {
        FormatArg::Pcm16 => WavFormat::Pcm16,
        FormatArg::Float32 => WavFormat::Float32,
    }
}

fn read_input(path: &Path) -> Result<AudioBuffer> {
    let input = read_wav(path)?;
    input.require_rate(SAMPLE_RATE)?;
    Ok(input)
}

fn stream_file(model: Model, input: &[f32], chunk: usize) -> Vec<f32> {
    let mut s = Streamer::new(model);
    let mut out = Vec::with_capacity(input.len());
    for c in input.chunks(chunk) {
        out.extend(s.process(c));
    }
    out
}

pub fn process(a: ProcessArgs) -> Result<()> {
    let model = a.source.load()?;
    let input = read_input(&a.input)?;
    let samples = match a.chunked {
        Some(0) => return Err(UsageError("--chunked needs a positive chunk size".into()).into()),
        Some(n) => stream_file(model, &input.samples, n),
        None => tfilm_fx::eval::process_offline(&model, &input)?.samples,
    };
    write_wav(&AudioBuffer::new(samples, input.sample_rate), &a.output, wav_format(a.format))?;
    println!("wrote {}", a.output.display());
    Ok(())
}

#[derive(Args)]
pub struct StreamArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Samples per call.
    #[arg(long, default_value_t = 512)]
    chunk: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Float32)]
    format: FormatArg,
}

pub fn stream(a: StreamArgs) -> Result<()> {
    if a.chunk == 0 {
        return Err(UsageError("--chunk must be positive".into()).into());
    }
    let model = a.source.load()?;
    let input = read_input(&a.input)?;
    let context = Streamer::new(model.clone()).state().context_samples();
    let start = Instant::now();
    let samples = stream_file(model, &input.samples, a.chunk);
    let elapsed = start.elapsed().as_secs_f64();
    let audio = input.duration_s();
    println!(
        "{:.2} s of audio in {:.3} s, {} chunks of {}: real-time factor {:.1}x (context {} samples)",
        audio,
        elapsed,
        input.samples.len().div_ceil(a.chunk),
        a.chunk,
        audio / elapsed.max(1e-9),
        context
    );
    if let Some(path) = &a.output {
        write_wav(&AudioBuffer::new(samples, input.sample_rate), path, wav_format(a.format))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct InspectArgs {
    #[command(flatten)]
    source: ModelSource,
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let model = a.source.load()?;
    let spec = model.spec();
    match spec.receptive_field() {
        Ok(rf) => println!(
            "params: {}, receptive_field: {rf} samples ({:.1} ms @{SAMPLE_RATE}){}",
            model.num_params(),
            rf as f64 * 1000.0 / SAMPLE_RATE as f64,
            if spec.has_tfilm() { ", plus TFiLM state over all past blocks" } else { "" }
        ),
        Err(ModelError::UnboundedReceptiveField) => {
            println!("params: {}, receptive_field: unbounded (recurrent)", model.num_params())
        }
        Err(e) => return Err(e.into()),
    }
    if let Some(path) = &a.source.checkpoint {
        let ck = Checkpoint::load(path)?;
        println!(
            "epoch: {}, best_val_loss: {}",
            ck.training.epoch,
            ck.training.best_val_loss.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    Ok(())
}
