use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::signal::{render, SignalPlan};
use super::{EffectError, EffectParams};
use crate::audio::{read_wav, write_wav, AudioBuffer, WavFormat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input_path: String,
    pub target_path: String,
    pub split: Split,
    pub duration_s: f64,
}

/// Index of a paired corpus. Paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sample_rate: u32,
    #[serde(flatten)]
    pub effect: EffectParams,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EffectError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|source| EffectError::Io { path: path.display().to_string(), source })?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EffectError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|source| EffectError::Io { path: path.display().to_string(), source })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn duration_s(&self, split: Split) -> f64 {
        self.entries(split).map(|e| e.duration_s).sum()
    }

    /// Reads an entry's `(input, target)` audio.
    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(AudioBuffer, AudioBuffer), EffectError> {
        let input = read_wav(self.root.join(&entry.input_path))?;
        let target = read_wav(self.root.join(&entry.target_path))?;
        for buf in [&input, &target] {
            buf.require_rate(self.sample_rate)?;
        }
        if input.samples.len() != target.samples.len() {
            return Err(EffectError::InvalidParams(format!(
                "{} and {} differ in length",
                entry.input_path, entry.target_path
            )));
        }
        Ok((input, target))
    }
}

/// Sample ranges of the train, validation and test portions: the first half,
/// the next quarter, and the remainder.
pub fn split_bounds(total: usize) -> [(Split, std::ops::Range<usize>); 3] {
    let a = total / 2;
    let b = a + total / 4;
    [(Split::Train, 0..a), (Split::Val, a..b), (Split::Test, b..total)]
}

/// Renders a clean signal, processes it continuously through the effect,
/// splits both by time and writes float WAV pairs plus `manifest.json`
/// into `out_dir`.
pub fn synthesize_corpus(
    plan: &SignalPlan,
    effect: &EffectParams,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, EffectError> {
    effect.validate()?;
    let clean = render(plan, seed)?;
    let processed = effect.process(&clean, plan.sample_rate as f64)?;
    fs::create_dir_all(out_dir).map_err(|source| EffectError::Io { path: out_dir.display().to_string(), source })?;
    let mut entries = Vec::new();
    for (split, range) in split_bounds(clean.len()) {
        let input_path = format!("{}_input.wav", split.name());
        let target_path = format!("{}_target.wav", split.name());
        let input = AudioBuffer::new(clean[range.clone()].to_vec(), plan.sample_rate);
        let target = AudioBuffer::new(processed[range.clone()].to_vec(), plan.sample_rate);
        write_wav(&input, out_dir.join(&input_path), WavFormat::Float32)?;
        write_wav(&target, out_dir.join(&target_path), WavFormat::Float32)?;
        entries.push(ManifestEntry { input_path, target_path, split, duration_s: input.duration_s() });
    }
    let manifest = DatasetManifest {
        sample_rate: plan.sample_rate,
        effect: effect.clone(),
        seed,
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
