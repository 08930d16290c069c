//! Mono audio buffers, 16-bit PCM WAV I/O and energy/scaling primitives.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate used throughout the toolkit.
pub const CANONICAL_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;

/// Mono PCM signal held as double-precision samples.
///
/// Buffers are treated as immutable values; every operation that changes
/// samples returns a new buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Copy of the sub-range `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or(Error::LengthMismatch {
                left: start.saturating_add(len),
                right: self.samples.len(),
            })?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    pub(crate) fn check_same_rate(&self, other: &AudioBuffer) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                left: self.sample_rate,
                right: other.sample_rate,
            });
        }
        Ok(())
    }
}

/// Sum of squared samples.
pub fn energy(buffer: &AudioBuffer) -> f64 {
    buffer.samples.iter().map(|s| s * s).sum()
}

pub fn scale(buffer: &AudioBuffer, factor: f64) -> AudioBuffer {
    AudioBuffer {
        samples: buffer.samples.iter().map(|s| s * factor).collect(),
        sample_rate: buffer.sample_rate,
    }
}

/// Read a 16-bit signed PCM mono WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let unsupported = |property: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        property,
    };
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "channels = {} (expected mono)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(unsupported("sample format = float (expected PCM)".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "bits per sample = {} (expected 16)",
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Wav {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Hard-clip to [-1, 1] and round to the nearest 16-bit PCM code.
pub fn quantize_sample(sample: f64) -> i16 {
    let clipped = sample.clamp(-1.0, 1.0);
    (clipped * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Write the buffer as 16-bit mono PCM.
pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_err)?;
    {
        let mut w = writer.get_i16_writer(buffer.samples.len() as u32);
        for &s in &buffer.samples {
            w.write_sample(quantize_sample(s));
        }
        w.flush().map_err(map_err)?;
    }
    writer.finalize().map_err(map_err)
}
