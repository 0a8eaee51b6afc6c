//! Checkpoint files: an 8-byte little-endian header length, a UTF-8 JSON
//! header, then little-endian `f32` blobs at the offsets the header lists
//! (relative to the end of the header).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Model, ModelSpec};
use crate::tensor::Tensor;

use super::optim::{Adam, AdamConfig};
use super::schedule::Schedule;
use super::TrainError;

pub const FORMAT: &str = "tfilm-fx-checkpoint";
pub const VERSION: u32 = 1;

const MOMENT_M: &str = "optim.m.";
const MOMENT_V: &str = "optim.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamMeta>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: ModelSpec,
    training: TrainingState,
    tensors: Vec<TensorEntry>,
}

/// Model weights plus enough training state to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub training: TrainingState,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        let mut named: Vec<(String, &Tensor<f32>)> = self.model.named().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(adam) = &self.optimizer {
            for (prefix, moments) in [(MOMENT_M, &adam.m), (MOMENT_V, &adam.v)] {
                for (name, t) in self.model.names().iter().zip(moments) {
                    named.push((format!("{prefix}{name}"), t));
                }
            }
        }
        let mut tensors = Vec::with_capacity(named.len());
        let mut offset = 0u64;
        for (name, t) in &named {
            let length = 4 * t.numel() as u64;
            tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset, length });
            offset += length;
        }
        let mut training = self.training.clone();
        training.adam = self.optimizer.as_ref().map(|a| AdamMeta { config: a.config, step: a.step });
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            version: VERSION,
            spec: self.model.spec().clone(),
            training,
            tensors,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &named {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let bad = |msg: String| TrainError::Checkpoint(msg);
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad("file shorter than its length prefix".into()))?;
        let header_len =
            usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header length overflows".into()))?;
        let blob_start = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header runs past the end of the file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[8..blob_start])?;
        if header.format != FORMAT {
            return Err(bad(format!("unknown format `{}`", header.format)));
        }
        if header.version != VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let blobs = &bytes[blob_start..];
        let mut weights = Vec::new();
        let mut moments_m = std::collections::HashMap::new();
        let mut moments_v = std::collections::HashMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.length != 4 * n as u64 {
                return Err(bad(format!("`{}` declares {} bytes for shape {:?}", e.name, e.length, e.shape)));
            }
            let range = usize::try_from(e.offset)
                .ok()
                .and_then(|s| Some(s..s.checked_add(e.length as usize)?))
                .filter(|r| r.end <= blobs.len())
                .ok_or_else(|| bad(format!("`{}` lies outside the file", e.name)))?;
            let data = blobs[range].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(e.shape, data)?;
            if let Some(name) = e.name.strip_prefix(MOMENT_M) {
                moments_m.insert(name.to_string(), t);
            } else if let Some(name) = e.name.strip_prefix(MOMENT_V) {
                moments_v.insert(name.to_string(), t);
            } else {
                weights.push((e.name, t));
            }
        }
        let model = Model::from_named(header.spec, weights)?;
        let optimizer = match header.training.adam {
            Some(meta) => {
                let take = |map: &mut std::collections::HashMap<String, Tensor<f32>>, kind: &str| {
                    model
                        .names()
                        .iter()
                        .map(|n| map.remove(n).ok_or_else(|| bad(format!("missing optimizer {kind} moment for `{n}`"))))
                        .collect::<Result<Vec<_>, _>>()
                };
                let m = take(&mut moments_m, "first")?;
                let v = take(&mut moments_v, "second")?;
                Some(Adam { config: meta.config, step: meta.step, m, v })
            }
            None => None,
        };
        Ok(Checkpoint { model, training: header.training, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|source| TrainError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
