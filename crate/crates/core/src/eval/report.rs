use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{l1, mr_stft_distance, windowed_errors, SeriesStats, WindowError};
use super::EvalError;
use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::effects::{DatasetManifest, Split};
use crate::nn::Model;
use crate::tensor::StftParams;
use crate::train::LossConfig;

/// Length of the error-over-time analysis windows.
pub const WINDOW: usize = 8192;

/// Resolution of the per-window spectral error.
pub const WINDOW_STFT: StftParams = StftParams { fft_size: 2048, hop: 512, win_length: 2048 };

/// Whole-signal inference from a zero state.
pub fn process_offline(model: &Model, input: &AudioBuffer) -> Result<AudioBuffer, EvalError> {
    input.require_rate(SAMPLE_RATE)?;
    Ok(AudioBuffer::new(model.infer(&input.samples)?, input.sample_rate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub name: String,
    pub samples: usize,
    pub l1: f64,
    pub mrstft: f64,
}

/// Metrics of one model over a set of files.
///
/// `l1` is the mean absolute error over every sample of every file and
/// `mrstft` the length-weighted mean of the per-file values. The windowed
/// series runs over the files in order, with `start` counted from the
/// beginning of the first file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub checkpoint: Option<String>,
    pub params: usize,
    pub files: Vec<FileReport>,
    pub l1: f64,
    pub mrstft: f64,
    pub windows: Vec<WindowError>,
}

impl EvalReport {
    pub fn window_l1(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.l1).collect()
    }

    pub fn window_stft(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.stft).collect()
    }

    /// Statistics of the windowed `(l1, stft)` series.
    pub fn window_stats(&self) -> Option<(SeriesStats, SeriesStats)> {
        Some((SeriesStats::of(&self.window_l1())?, SeriesStats::of(&self.window_stft())?))
    }
}

/// Runs `model` over `(name, input, target)` triples and scores the output.
pub fn evaluate(
    model: &Model,
    name: &str,
    checkpoint: Option<String>,
    files: &[(String, AudioBuffer, AudioBuffer)],
    loss: &LossConfig,
) -> Result<EvalReport, EvalError> {
    if files.is_empty() {
        return Err(EvalError::Invalid("nothing to evaluate".into()));
    }
    let mut reports = Vec::with_capacity(files.len());
    let mut windows = Vec::new();
    let (mut abs_sum, mut weighted_stft, mut total) = (0.0, 0.0, 0usize);
    for (file, input, target) in files {
        target.require_rate(SAMPLE_RATE)?;
        let pred = process_offline(model, input)?;
        let (p, t) = (&pred.samples, &target.samples);
        let file_l1 = l1(p, t)?;
        let file_stft = mr_stft_distance(p, t, loss)?;
        for mut w in windowed_errors(p, t, WINDOW, &WINDOW_STFT)? {
            w.index = windows.len();
            w.start += total;
            windows.push(w);
        }
        abs_sum += p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>();
        weighted_stft += file_stft * p.len() as f64;
        total += p.len();
        reports.push(FileReport { name: file.clone(), samples: p.len(), l1: file_l1, mrstft: file_stft });
    }
    Ok(EvalReport {
        model: name.to_string(),
        checkpoint,
        params: model.num_params(),
        files: reports,
        l1: abs_sum / total as f64,
        mrstft: weighted_stft / total as f64,
        windows,
    })
}

/// [`evaluate`] over one split of a corpus.
pub fn evaluate_manifest(
    model: &Model,
    name: &str,
    checkpoint: Option<String>,
    manifest: &DatasetManifest,
    split: Split,
    loss: &LossConfig,
) -> Result<EvalReport, EvalError> {
    let mut files = Vec::new();
    for entry in manifest.entries(split) {
        let (input, target) = manifest.load_pair(entry)?;
        files.push((entry.target_path.clone(), input, target));
    }
    if files.is_empty() {
        return Err(EvalError::Invalid(format!("manifest has no {} entries", split.name())));
    }
    evaluate(model, name, checkpoint, &files, loss)
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub params: usize,
    pub l1: f64,
    pub mrstft: f64,
    pub best_flag: bool,
}

impl From<&EvalReport> for SummaryRow {
    fn from(r: &EvalReport) -> Self {
        SummaryRow { model: r.model.clone(), params: r.params, l1: r.l1, mrstft: r.mrstft, best_flag: false }
    }
}

/// Sorts rows by model name and flags the one with the lowest `l1 + mrstft`.
/// Equal totals go to the lower MR-STFT; rows with non-finite errors are
/// never flagged.
pub fn compare<R: Into<SummaryRow>>(reports: impl IntoIterator<Item = R>) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = reports.into_iter().map(Into::into).collect();
    rows.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.params.cmp(&b.params))
            .then(a.l1.total_cmp(&b.l1))
            .then(a.mrstft.total_cmp(&b.mrstft))
    });
    rows.iter_mut().for_each(|r| r.best_flag = false);
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| (r.l1 + r.mrstft).is_finite())
        .min_by(|(_, a), (_, b)| (a.l1 + a.mrstft).total_cmp(&(b.l1 + b.mrstft)).then(a.mrstft.total_cmp(&b.mrstft)))
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].best_flag = true;
    }
    rows
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, EvalError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.display().to_string(), source })?;
    }
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut w = csv_writer(path.as_ref())?;
    if rows.is_empty() {
        w.write_record(["model", "params", "l1", "mrstft", "best_flag"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| EvalError::Io { path: path.as_ref().display().to_string(), source })
}

pub fn write_windowed_csv(windows: &[WindowError], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    if windows.is_empty() {
        w.write_record(["window_index", "start_sample", "l1", "stft"])?;
    }
    for row in windows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

pub fn read_windowed_csv(path: impl AsRef<Path>) -> Result<Vec<WindowError>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
