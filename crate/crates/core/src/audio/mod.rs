//! RIFF/WAVE reading and writing.
//!
//! Reads PCM16, PCM24 and 32-bit float data (plain or extensible format
//! tags) with any channel count, averaging channels down to mono. Writes
//! mono PCM16 or 32-bit float.

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Rate every training pipeline runs at.
pub const SAMPLE_RATE: u32 = 44_100;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("sample rate {found} Hz does not match the expected {expected} Hz; resample the file first")]
    SampleRate { found: u32, expected: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioBuffer { samples, sample_rate }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn require_rate(&self, expected: u32) -> Result<(), AudioError> {
        if self.sample_rate == expected {
            Ok(())
        } else {
            Err(AudioError::SampleRate { found: self.sample_rate, expected })
        }
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| AudioError::Io { path: path.display().to_string(), source })?;
    decode_wav(&bytes)
}

pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, format: WavFormat) -> Result<(), AudioError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(buffer, format))
        .map_err(|source| AudioError::Io { path: path.display().to_string(), source })
}

struct Fmt {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Fmt, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::Malformed(format!("fmt chunk is {} bytes", body.len())));
    }
    let mut tag = u16_at(body, 0);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(AudioError::Malformed("truncated extensible fmt chunk".into()));
        }
        tag = u16_at(body, 24);
    }
    Ok(Fmt { tag, channels: u16_at(body, 2), sample_rate: u32_at(body, 4), bits: u16_at(body, 14) })
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Malformed("missing RIFF/WAVE header".into()));
    }
    let mut fmt = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            AudioError::Malformed(format!("chunk `{}` overruns the file", String::from_utf8_lossy(id)))
        })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| AudioError::Malformed("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Malformed("no data chunk".into()))?;
    if fmt.channels == 0 || fmt.sample_rate == 0 {
        return Err(AudioError::Malformed("zero channels or sample rate".into()));
    }

    let width = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_FLOAT, 32) => 4,
        (tag, bits) => return Err(AudioError::Unsupported(format!("format tag {tag} with {bits} bits per sample"))),
    };
    let frame = width * fmt.channels as usize;
    if data.len() % frame != 0 {
        return Err(AudioError::Malformed(format!(
            "data length {} is not a multiple of the {frame}-byte frame",
            data.len()
        )));
    }
    let decode = |s: &[u8]| -> f32 {
        match width {
            2 => i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0,
            3 => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f32 / 8_388_608.0,
            _ => f32::from_le_bytes([s[0], s[1], s[2], s[3]]),
        }
    };
    let channels = fmt.channels as usize;
    let samples =
        data.chunks_exact(frame)
            .map(|f| {
                if channels == 1 {
                    decode(f)
                } else {
                    f.chunks_exact(width).map(decode).sum::<f32>() / channels as f32
                }
            })
            .collect();
    Ok(AudioBuffer::new(samples, fmt.sample_rate))
}

/// Quantises to 16 bits: clip to [−1, 1], scale by 32768, round half away
/// from zero, saturate at 32767.
pub fn to_pcm16(v: f32) -> i16 {
    (v.clamp(-1.0, 1.0) as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(buffer: &AudioBuffer, format: WavFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 16u16),
        WavFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block_align = bits / 8;
    let data_len = buffer.samples.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in &buffer.samples {
        match format {
            WavFormat::Pcm16 => out.extend_from_slice(&to_pcm16(v).to_le_bytes()),
            WavFormat::Float32 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}
