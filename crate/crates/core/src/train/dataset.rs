use crate::effects::{DatasetManifest, Split};

use super::TrainError;

/// Aligned input/target crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

/// Non-overlapping crops of `len` samples. A shorter trailing crop is kept
/// when it has at least `keep_tail` samples.
pub fn crop(input: &[f32], target: &[f32], len: usize, keep_tail: Option<usize>) -> Vec<Segment> {
    let n = input.len().min(target.len());
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + len).min(n);
        let full = end - start == len;
        if full || keep_tail.is_some_and(|min| end - start >= min) {
            out.push(Segment { input: input[start..end].to_vec(), target: target[start..end].to_vec() });
        }
        start = end;
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
}

impl TrainData {
    /// Training crops of exactly `segment_length`; validation crops of the
    /// same length plus a tail of at least `min_val_length`.
    pub fn from_signals(
        train: (&[f32], &[f32]),
        val: (&[f32], &[f32]),
        segment_length: usize,
        min_val_length: usize,
    ) -> Result<Self, TrainError> {
        let data = TrainData {
            train: crop(train.0, train.1, segment_length, None),
            val: crop(val.0, val.1, segment_length, Some(min_val_length)),
        };
        data.check(segment_length)?;
        Ok(data)
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        segment_length: usize,
        min_val_length: usize,
    ) -> Result<Self, TrainError> {
        let mut data = TrainData::default();
        for (split, keep_tail) in [(Split::Train, None), (Split::Val, Some(min_val_length))] {
            for entry in manifest.entries(split) {
                let (input, target) = manifest.load_pair(entry)?;
                let segs = crop(&input.samples, &target.samples, segment_length, keep_tail);
                match split {
                    Split::Train => data.train.extend(segs),
                    _ => data.val.extend(segs),
                }
            }
        }
        data.check(segment_length)?;
        Ok(data)
    }

    fn check(&self, segment_length: usize) -> Result<(), TrainError> {
        if self.train.is_empty() {
            return Err(TrainError::Data(format!(
                "training audio is shorter than one {segment_length}-sample segment"
            )));
        }
        if self.val.is_empty() {
            return Err(TrainError::Data("validation audio is too short to evaluate".into()));
        }
        Ok(())
    }
}
