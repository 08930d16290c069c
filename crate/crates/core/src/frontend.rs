//! Log-mel filterbank features with per-utterance mean normalization and
//! context stacking.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, CANONICAL_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub num_mel_bins: usize,
    pub fft_size: usize,
    pub context_left: usize,
    pub context_right: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            num_mel_bins: 20,
            fft_size: 512,
            context_left: 3,
            context_right: 3,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * CANONICAL_RATE as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * CANONICAL_RATE as f64 / 1000.0).round() as usize
    }

    pub fn stacked_dim(&self) -> usize {
        self.num_mel_bins * (self.context_left + 1 + self.context_right)
    }

    /// `1 + floor((n - window) / hop)`, or 0 when shorter than one window.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        let w = self.window_samples();
        if num_samples < w {
            0
        } else {
            1 + (num_samples - w) / self.hop_samples()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.window_samples(), self.hop_samples());
        if h == 0 || w < h {
            return Err(Error::Config(format!("need window >= hop > 0 (window {w}, hop {h} samples)")));
        }
        if self.num_mel_bins < 2 {
            return Err(Error::Config("num_mel_bins must be at least 2".into()));
        }
        if self.fft_size < w {
            return Err(Error::Config(format!("fft_size {} shorter than window {w}", self.fft_size)));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Frame-level feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub frame_hop_ms: f64,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters spanning 0 Hz to Nyquist, `[bins, fft/2+1]`.
pub fn mel_filterbank(num_bins: usize, fft_size: usize, sample_rate: u32) -> Array2<f64> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (num_bins + 1) as f64))
        .collect();
    let n_freqs = fft_size / 2 + 1;
    let mut fb = Array2::zeros((num_bins, n_freqs));
    for m in 0..num_bins {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_freqs {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Reusable extractor holding the FFT plan, window and filterbank.
#[derive(Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Array2<f64>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let w = config.window_samples();
        let window = (0..w)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (w - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let filterbank = mel_filterbank(config.num_mel_bins, config.fft_size, CANONICAL_RATE);
        Ok(Self {
            config,
            fft,
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Floored natural-log mel energies before normalization, `[frames, bins]`.
    pub fn log_mel(&self, audio: &AudioBuffer) -> Result<Array2<f64>> {
        if audio.sample_rate() != CANONICAL_RATE {
            return Err(Error::SampleRateMismatch {
                left: audio.sample_rate(),
                right: CANONICAL_RATE,
            });
        }
        let cfg = &self.config;
        let frames = cfg.frame_count(audio.len());
        if frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "audio of {} samples is shorter than one {}-sample window",
                audio.len(),
                cfg.window_samples()
            )));
        }
        let hop = cfg.hop_samples();
        let n_freqs = cfg.fft_size / 2 + 1;
        let mut out = Array2::zeros((frames, cfg.num_mel_bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_freqs];
        let x = audio.samples();
        for t in 0..frames {
            let frame = &x[t * hop..t * hop + self.window.len()];
            for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex64::new(s * w, 0.0);
            }
            for b in &mut buf[self.window.len()..] {
                *b = Complex64::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..cfg.num_mel_bins {
                let e: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                out[[t, m]] = e.max(cfg.log_floor).ln();
            }
        }
        Ok(out)
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let mut logmel = self.log_mel(audio)?;
        mean_normalize(&mut logmel);
        Ok(FeatureMatrix {
            data: stack_context(logmel.view(), self.config.context_left, self.config.context_right),
            frame_hop_ms: self.config.hop_ms,
        })
    }
}

/// Subtract each column's mean over frames.
pub fn mean_normalize(x: &mut Array2<f64>) {
    let frames = x.nrows() as f64;
    for mut col in x.columns_mut() {
        // Pivot on the first value so constant columns normalize to exactly 0.
        let pivot = col[0];
        let mean = pivot + col.iter().map(|v| v - pivot).sum::<f64>() / frames;
        col.mapv_inplace(|v| v - mean);
    }
}

/// Concatenate frames `t-left ..= t+right`, replicating edge frames.
pub fn stack_context(x: ArrayView2<f64>, left: usize, right: usize) -> Array2<f64> {
    let (frames, dims) = x.dim();
    let width = left + 1 + right;
    let mut out = Array2::zeros((frames, dims * width));
    for t in 0..frames {
        for k in 0..width {
            let src = (t + k).saturating_sub(left).min(frames - 1);
            out.slice_mut(s![t, k * dims..(k + 1) * dims]).assign(&x.row(src));
        }
    }
    out
}

pub fn compute_features(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(config.clone())?.compute(audio)
}

const DUMP_MAGIC: &[u8; 4] = b"KWSF";

/// Debug dump: `"KWSF"`, u32 frames, u32 dims, u32 reserved (0), then
/// row-major little-endian f32 values.
pub fn write_feature_dump(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + 4 * features.data.len());
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&(features.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(features.dims() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in features.data.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_feature_dump(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Serde(format!("{}: not a feature dump", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (frames, dims) = (word(4), word(8));
    if bytes.len() != 16 + 4 * frames * dims {
        return Err(Error::Serde(format!("{}: truncated feature dump", path.display())));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((frames, dims), values).map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tone(n: usize, seed: u64) -> AudioBuffer {
        let mut rng = crate::seed::rng_from(seed);
        let xs = (0..n)
            .map(|i| {
                0.4 * (i as f64 * 0.07).sin() + 0.2 * (i as f64 * 0.31).sin() + rng.random_range(-0.05..0.05)
            })
            .collect();
        AudioBuffer::new(xs, CANONICAL_RATE).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.frame_count(16000), 98);
        let f = compute_features(&tone(16000, 1), &cfg).unwrap();
        assert_eq!(f.frames(), 98);
        assert_eq!(f.dims(), 140);
        assert_eq!(cfg.stacked_dim(), 140);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg.clone()).unwrap();
        let zeros = AudioBuffer::zeros(4000, CANONICAL_RATE);
        let lm = ex.log_mel(&zeros).unwrap();
        assert!(lm.iter().all(|&v| v == cfg.log_floor.ln()));
        let f = ex.compute(&zeros).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_an_error() {
        let cfg = FeatureConfig::default();
        assert!(compute_features(&AudioBuffer::zeros(399, CANONICAL_RATE), &cfg).is_err());
        assert_eq!(compute_features(&AudioBuffer::zeros(400, CANONICAL_RATE), &cfg).unwrap().frames(), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            FeatureConfig { hop_ms: 30.0, ..Default::default() },
            FeatureConfig { num_mel_bins: 1, ..Default::default() },
            FeatureConfig { fft_size: 256, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn filterbank_rows_are_triangles() {
        let fb = mel_filterbank(20, 512, 16000);
        for row in fb.rows() {
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert!(peak > 0.5 && peak <= 1.0);
        }
    }

    #[test]
    fn amplitude_scaling_cancels_after_normalization() {
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg).unwrap();
        let x = tone(8000, 3);
        let a = 0.37;
        let y = crate::audio::scale(&x, a);
        let (lx, ly) = (ex.log_mel(&x).unwrap(), ex.log_mel(&y).unwrap());
        for (p, q) in lx.iter().zip(ly.iter()) {
            assert!((q - p - 2.0 * a.ln()).abs() < 1e-9);
        }
        let (fx, fy) = (ex.compute(&x).unwrap(), ex.compute(&y).unwrap());
        for (p, q) in fx.data.iter().zip(fy.data.iter()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.kwsf");
        let f = compute_features(&tone(2000, 4), &FeatureConfig::default()).unwrap();
        write_feature_dump(&f, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"KWSF");
        assert_eq!(bytes.len(), 16 + 4 * f.data.len());
        let back = read_feature_dump(&p).unwrap();
        assert_eq!(back.dim(), f.data.dim());
        assert_eq!(back[[2, 5]], f.data[[2, 5]] as f32);
    }

    proptest! {
        #[test]
        fn frame_count_closed_form(n in 400usize..20000) {
            let cfg = FeatureConfig::default();
            let f = FeatureExtractor::new(cfg.clone()).unwrap().log_mel(&AudioBuffer::zeros(n, CANONICAL_RATE)).unwrap();
            prop_assert_eq!(f.nrows(), 1 + (n - 400) / 160);
        }

        #[test]
        fn stacking_replicates_edges(frames in 1usize..12, dims in 1usize..5, left in 0usize..4, right in 0usize..4) {
            let x = Array2::from_shape_fn((frames, dims), |(t, d)| (t * 10 + d) as f64);
            let st = stack_context(x.view(), left, right);
            for t in 0..frames {
                for k in 0..=(left + right) {
                    let src = (t as isize + k as isize - left as isize).clamp(0, frames as isize - 1) as usize;
                    for d in 0..dims {
                        prop_assert_eq!(st[[t, k * dims + d]], x[[src, d]]);
                    }
                }
            }
        }
    }
}
