//! Interference augmentation: reverberate interference with a room impulse
//! response, crop it to the utterance, scale it to a target
//! signal-to-interference ratio and add it to the clean utterance.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{self, energy, AudioBuffer, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::manifest::{InterferenceManifest, ManifestEntry, UtteranceManifest};
use crate::seed::{self, Rng};

/// Filter length product above which `convolve` switches to FFT.
const DIRECT_CONVOLUTION_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub label: String,
}

impl RoomImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32, label: impl Into<String>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Empty("impulse response"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite impulse response tap".into()));
        }
        Ok(Self {
            taps,
            sample_rate,
            label: label.into(),
        })
    }

    /// Load taps from a mono 16-bit WAV file.
    pub fn from_wav(path: impl AsRef<Path>, label: impl Into<String>) -> Result<Self> {
        let buf = audio::load_wav(path)?;
        let rate = buf.sample_rate();
        Self::new(buf.into_samples(), rate, label)
    }
}

/// Inclusive dB interval from which target SIRs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirRange {
    pub low_db: f64,
    pub high_db: f64,
}

impl SirRange {
    pub fn new(low_db: f64, high_db: f64) -> Result<Self> {
        if !(low_db.is_finite() && high_db.is_finite()) || low_db > high_db {
            return Err(Error::InvalidArgument(format!(
                "invalid SIR range [{low_db}, {high_db}]"
            )));
        }
        Ok(Self { low_db, high_db })
    }

    pub fn contains(&self, db: f64) -> bool {
        (self.low_db..=self.high_db).contains(&db)
    }
}

/// Everything that determines one corruption run.
#[derive(Debug, Clone)]
pub struct AugmentationSpec {
    pub sir_range: SirRange,
    pub interference_manifest: PathBuf,
    pub rir_set: Vec<RoomImpulseResponse>,
    pub master_seed: u64,
}

/// Provenance of one corrupted utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub utterance_id: String,
    pub interference_id: String,
    pub rir_label: String,
    pub target_sir_db: f64,
    pub alpha: f64,
    pub crop_offset: usize,
}

/// Full linear convolution; output length is `len(signal) + len(taps) - 1`.
pub fn convolve(signal: &AudioBuffer, rir: &RoomImpulseResponse) -> Result<AudioBuffer> {
    if signal.sample_rate() != rir.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: signal.sample_rate(),
            right: rir.sample_rate,
        });
    }
    if signal.is_empty() {
        return Ok(AudioBuffer::zeros(0, signal.sample_rate()));
    }
    let out = convolve_slices(signal.samples(), &rir.taps);
    AudioBuffer::new(out, signal.sample_rate())
}

fn convolve_slices(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.len().min(h.len()) <= 64 || x.len() * h.len() <= DIRECT_CONVOLUTION_LIMIT {
        convolve_direct(x, h)
    } else {
        convolve_fft(x, h)
    }
}

fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &hj) in out[i..].iter_mut().zip(h) {
            *o += xi * hj;
        }
    }
    out
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let norm = 1.0 / n as f64;
    a[..out_len].iter().map(|c| c.re * norm).collect()
}

/// Amplitude envelope of an exponentially decaying reverb tail: reaches
/// -60 dB after `rt60_seconds`.
pub fn rir_envelope(n: usize, rt60_seconds: f64, sample_rate: u32) -> f64 {
    (-(3.0 * std::f64::consts::LN_10) * n as f64 / (rt60_seconds * sample_rate as f64)).exp()
}

/// Synthetic room impulse response: seeded Gaussian noise under an
/// exponential decay, direct path forced to 1, then peak-normalized.
pub fn synth_rir(rt60_seconds: f64, length_samples: usize, seed: u64) -> Result<RoomImpulseResponse> {
    if !(rt60_seconds > 0.0 && rt60_seconds.is_finite()) {
        return Err(Error::InvalidArgument(format!("rt60 must be positive, got {rt60_seconds}")));
    }
    if length_samples == 0 {
        return Err(Error::InvalidArgument("RIR length must be at least 1".into()));
    }
    let mut rng = seed::rng_from(seed);
    let mut taps: Vec<f64> = (0..length_samples)
        .map(|n| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * rir_envelope(n, rt60_seconds, CANONICAL_RATE)
        })
        .collect();
    taps[0] = 1.0;
    let peak = taps.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    for t in &mut taps {
        *t /= peak;
    }
    RoomImpulseResponse::new(
        taps,
        CANONICAL_RATE,
        format!("synth-rt{rt60_seconds}-n{length_samples}-s{seed}"),
    )
}

/// Uniform draw on `[low_db, high_db]`.
pub fn sample_sir(range: &SirRange, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random();
    range.low_db + (range.high_db - range.low_db) * u
}

/// Random contiguous crop of `length` samples. Interference shorter than the
/// request is tiled by repetition first.
pub fn crop_random(
    interference: &AudioBuffer,
    length: usize,
    rng: &mut Rng,
) -> Result<(AudioBuffer, usize)> {
    if interference.is_empty() {
        return Err(Error::Empty("interference buffer"));
    }
    if length == 0 {
        return Err(Error::InvalidArgument("crop length must be at least 1".into()));
    }
    let src = interference.samples();
    if src.len() < length {
        let tiled: Vec<f64> = src.iter().copied().cycle().take(length).collect();
        return Ok((AudioBuffer::new(tiled, interference.sample_rate())?, 0));
    }
    let offset = rng.random_range(0..=src.len() - length);
    Ok((interference.slice(offset, length)?, offset))
}

fn check_pair(a: &AudioBuffer, b: &AudioBuffer) -> Result<()> {
    a.check_same_rate(b)?;
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Interference scale that puts the mixture at `target_sir_db`.
pub fn compute_alpha(speech: &AudioBuffer, interference: &AudioBuffer, target_sir_db: f64) -> Result<f64> {
    check_pair(speech, interference)?;
    let es = energy(speech);
    let en = energy(interference);
    if es <= 0.0 {
        return Err(Error::ZeroEnergy("speech"));
    }
    if en <= 0.0 {
        return Err(Error::ZeroEnergy("interference"));
    }
    Ok(es.sqrt() / en.sqrt() * 10f64.powf(-target_sir_db / 20.0))
}

/// Utterance-level SIR in dB.
pub fn measure_sir(speech: &AudioBuffer, scaled_interference: &AudioBuffer) -> Result<f64> {
    check_pair(speech, scaled_interference)?;
    let es = energy(speech);
    let en = energy(scaled_interference);
    if es <= 0.0 {
        return Err(Error::ZeroEnergy("speech"));
    }
    if en <= 0.0 {
        return Err(Error::ZeroEnergy("interference"));
    }
    Ok(20.0 * (es.sqrt() / en.sqrt()).log10())
}

/// `utterance + alpha * interference`, without clipping.
pub fn mix(utterance: &AudioBuffer, interference: &AudioBuffer, alpha: f64) -> Result<AudioBuffer> {
    check_pair(utterance, interference)?;
    let samples = utterance
        .samples()
        .iter()
        .zip(interference.samples())
        .map(|(u, n)| u + alpha * n)
        .collect();
    AudioBuffer::new(samples, utterance.sample_rate())
}

/// Interference clips already convolved with every impulse response.
pub struct ReverberatedBank {
    interference_ids: Vec<String>,
    rir_labels: Vec<String>,
    // indexed [interference][rir]
    signals: Vec<Vec<Arc<AudioBuffer>>>,
}

impl ReverberatedBank {
    pub fn build(
        interference: &[(String, AudioBuffer)],
        rirs: &[RoomImpulseResponse],
        exec: Execution,
    ) -> Result<Self> {
        if interference.is_empty() {
            return Err(Error::Empty("interference manifest"));
        }
        if rirs.is_empty() {
            return Err(Error::Empty("RIR set"));
        }
        let pairs: Vec<(usize, usize)> = (0..interference.len())
            .flat_map(|i| (0..rirs.len()).map(move |r| (i, r)))
            .collect();
        let convolved = exec::map(exec, &pairs, |&(i, r)| convolve(&interference[i].1, &rirs[r]));
        let mut signals = vec![Vec::with_capacity(rirs.len()); interference.len()];
        for ((i, _), c) in pairs.into_iter().zip(convolved) {
            signals[i].push(Arc::new(c?));
        }
        Ok(Self {
            interference_ids: interference.iter().map(|(id, _)| id.clone()).collect(),
            rir_labels: rirs.iter().map(|r| r.label.clone()).collect(),
            signals,
        })
    }

    pub fn load(spec: &AugmentationSpec, exec: Execution) -> Result<Self> {
        let manifest = InterferenceManifest::read(&spec.interference_manifest)?;
        if manifest.is_empty() {
            return Err(Error::Empty("interference manifest"));
        }
        let clips = manifest
            .entries
            .iter()
            .map(|e| Ok((e.id.clone(), audio::load_wav(manifest.resolve(&e.wav))?)))
            .collect::<Result<Vec<_>>>()?;
        Self::build(&clips, &spec.rir_set, exec)
    }

    pub fn get(&self, interference: usize, rir: usize) -> &AudioBuffer {
        &self.signals[interference][rir]
    }

    /// Find a reverberated clip by identifiers.
    pub fn lookup(&self, interference_id: &str, rir_label: &str) -> Option<&AudioBuffer> {
        let i = self.interference_ids.iter().position(|x| x == interference_id)?;
        let r = self.rir_labels.iter().position(|x| x == rir_label)?;
        Some(self.get(i, r))
    }
}

/// Result of corrupting one utterance in memory.
pub struct Corruption {
    pub mixture: AudioBuffer,
    /// Cropped reverberated interference before scaling.
    pub interference: AudioBuffer,
    pub record: CorruptionRecord,
}

/// Corrupt one utterance with a generator keyed by its id.
pub fn corrupt_utterance(
    utterance_id: &str,
    speech: &AudioBuffer,
    bank: &ReverberatedBank,
    sir_range: &SirRange,
    master_seed: u64,
) -> Result<Corruption> {
    let mut rng = seed::rng_from(seed::utterance_seed(master_seed, utterance_id));
    let i = rng.random_range(0..bank.interference_ids.len());
    let r = rng.random_range(0..bank.rir_labels.len());
    let reverberated = bank.get(i, r);
    speech.check_same_rate(reverberated)?;
    let (segment, crop_offset) = crop_random(reverberated, speech.len().max(1), &mut rng)?;
    let target_sir_db = sample_sir(sir_range, &mut rng);
    let alpha = compute_alpha(speech, &segment, target_sir_db)?;
    let mixture = mix(speech, &segment, alpha)?;
    Ok(Corruption {
        mixture,
        interference: segment,
        record: CorruptionRecord {
            utterance_id: utterance_id.to_string(),
            interference_id: bank.interference_ids[i].clone(),
            rir_label: bank.rir_labels[r].clone(),
            target_sir_db,
            alpha,
            crop_offset,
        },
    })
}

/// Corrupted manifest plus per-utterance provenance.
pub struct AugmentOutput {
    pub manifest: UtteranceManifest,
    pub records: Vec<CorruptionRecord>,
    /// Utterances that failed and were skipped, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Corrupt every utterance of `clean` into `output_dir`.
///
/// Writes `output_dir/wavs/<id>.wav` and `output_dir/manifest.jsonl`. Fails
/// only if more than 1% of utterances fail.
pub fn augment_corpus(
    clean: &UtteranceManifest,
    spec: &AugmentationSpec,
    output_dir: &Path,
    exec: Execution,
) -> Result<AugmentOutput> {
    let bank = ReverberatedBank::load(spec, exec)?;
    augment_with_bank(clean, &bank, &spec.sir_range, spec.master_seed, output_dir, exec)
}

pub fn augment_with_bank(
    clean: &UtteranceManifest,
    bank: &ReverberatedBank,
    sir_range: &SirRange,
    master_seed: u64,
    output_dir: &Path,
    exec: Execution,
) -> Result<AugmentOutput> {
    let wav_dir = output_dir.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut entries: Vec<&ManifestEntry> = clean.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let results = exec::map(exec, &entries, |entry| -> Result<(ManifestEntry, CorruptionRecord)> {
        let speech = audio::load_wav(clean.resolve(&entry.wav))?;
        let c = corrupt_utterance(&entry.id, &speech, bank, sir_range, master_seed)?;
        let rel = format!("wavs/{}.wav", entry.id);
        audio::save_wav(&c.mixture, output_dir.join(&rel))?;
        let mut out = (*entry).clone();
        out.wav = rel;
        out.target_sir_db = Some(c.record.target_sir_db);
        out.interference_id = Some(c.record.interference_id.clone());
        out.rir_label = Some(c.record.rir_label.clone());
        out.alpha = Some(c.record.alpha);
        out.crop_offset = Some(c.record.crop_offset);
        Ok((out, c.record))
    });

    let total = entries.len();
    let mut out_entries = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (entry, r) in entries.iter().zip(results) {
        match r {
            Ok((e, rec)) => {
                out_entries.push(e);
                records.push(rec);
            }
            Err(err) => failures.push((entry.id.clone(), err.to_string())),
        }
    }
    if failures.len() * 100 > total {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
            first: format!("{}: {}", failures[0].0, failures[0].1),
        });
    }
    let manifest = UtteranceManifest {
        dir: output_dir.to_path_buf(),
        entries: out_entries,
    };
    manifest.write(output_dir.join("manifest.jsonl"))?;
    Ok(AugmentOutput {
        manifest,
        records,
        failures,
    })
}

/// Index interference clips by id, e.g. for re-deriving stored components.
pub fn index_interference(manifest: &InterferenceManifest) -> Result<HashMap<String, AudioBuffer>> {
    manifest
        .entries
        .iter()
        .map(|e| Ok((e.id.clone(), audio::load_wav(manifest.resolve(&e.wav))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::scale;
    use proptest::prelude::*;

    fn buf(xs: &[f64]) -> AudioBuffer {
        AudioBuffer::new(xs.to_vec(), CANONICAL_RATE).unwrap()
    }

    fn rir(taps: &[f64]) -> RoomImpulseResponse {
        RoomImpulseResponse::new(taps.to_vec(), CANONICAL_RATE, "t").unwrap()
    }

    // Polynomial multiplication, written independently of the library path.
    fn naive(x: &[f64], h: &[f64]) -> Vec<f64> {
        let n = x.len() + h.len() - 1;
        (0..n)
            .map(|k| {
                let mut acc = 0.0;
                for j in 0..h.len() {
                    if k >= j && k - j < x.len() {
                        acc += x[k - j] * h[j];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn convolve_examples() {
        let x = buf(&[1.0, 2.0, 3.0]);
        assert_eq!(convolve(&x, &rir(&[1.0])).unwrap().samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(
            convolve(&x, &rir(&[0.0, 1.0])).unwrap().samples(),
            &[0.0, 1.0, 2.0, 3.0]
        );
        assert_eq!(
            convolve(&buf(&[1.0, 2.0]), &rir(&[1.0, 1.0])).unwrap().samples(),
            &[1.0, 3.0, 2.0]
        );
    }

    #[test]
    fn convolve_rejects_rate_mismatch() {
        let h = RoomImpulseResponse::new(vec![1.0], 8000, "x").unwrap();
        assert!(matches!(
            convolve(&buf(&[1.0]), &h),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn fft_path_matches_naive() {
        let mut rng = seed::rng_from(3);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..700).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = convolve(&buf(&x), &rir(&h)).unwrap();
        let want = naive(&x, &h);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.samples().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn synth_rir_examples() {
        assert_eq!(synth_rir(0.3, 1, 9).unwrap().taps, vec![1.0]);
        assert_eq!(synth_rir(0.3, 500, 9).unwrap(), synth_rir(0.3, 500, 9).unwrap());
        assert_ne!(synth_rir(0.3, 500, 9).unwrap().taps, synth_rir(0.3, 500, 10).unwrap().taps);
        let n = (0.5 * 16000.0) as usize;
        let ratio = rir_envelope(n, 0.5, 16000) / rir_envelope(0, 0.5, 16000);
        assert!((ratio - 1e-3).abs() < 1e-12);
        let r = synth_rir(0.4, 4000, 1).unwrap();
        let peak = r.taps.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        assert!((peak - 1.0).abs() < 1e-15);
        assert!(synth_rir(0.0, 10, 1).is_err());
        assert!(synth_rir(0.3, 0, 1).is_err());
    }

    #[test]
    fn sample_sir_examples() {
        let mut rng = seed::rng_from(1);
        assert_eq!(sample_sir(&SirRange::new(5.0, 5.0).unwrap(), &mut rng), 5.0);

        let range = SirRange::new(0.0, 40.0).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| sample_sir(&range, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 20.0).abs() < 0.5, "{mean}");
        assert!(draws.iter().all(|&d| (0.0..=40.0).contains(&d)));

        let wide = SirRange::new(-20.0, 40.0).unwrap();
        assert!((0..10_000).all(|_| wide.contains(sample_sir(&wide, &mut rng))));
        assert!(SirRange::new(1.0, 0.0).is_err());
    }

    #[test]
    fn crop_examples() {
        let mut rng = seed::rng_from(1);
        let x = buf(&[1.0, 2.0, 3.0]);
        let (c, off) = crop_random(&x, 3, &mut rng).unwrap();
        assert_eq!((c.samples(), off), (&[1.0, 2.0, 3.0][..], 0));

        let (c, off) = crop_random(&buf(&[1.0, 2.0]), 5, &mut rng).unwrap();
        assert_eq!(c.samples(), &[1.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(off, 0);

        let long = buf(&(0..100).map(f64::from).collect::<Vec<_>>());
        let a = crop_random(&long, 10, &mut seed::rng_from(42)).unwrap();
        let b = crop_random(&long, 10, &mut seed::rng_from(42)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.samples()[0], a.1 as f64);

        assert!(crop_random(&buf(&[]), 3, &mut rng).is_err());
    }

    #[test]
    fn alpha_examples() {
        let s = buf(&[1.0, -1.0]);
        assert!((compute_alpha(&s, &s, 0.0).unwrap() - 1.0).abs() < 1e-15);

        // energy 4 vs 1 at 20 dB
        let s = buf(&[2.0, 0.0]);
        let n = buf(&[0.0, 1.0]);
        assert!((compute_alpha(&s, &n, 20.0).unwrap() - 0.2).abs() < 1e-15);

        // energy 1 vs 100 at -20 dB
        let s = buf(&[1.0, 0.0]);
        let n = buf(&[0.0, 10.0]);
        assert!((compute_alpha(&s, &n, -20.0).unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(
            compute_alpha(&s, &buf(&[0.0, 0.0]), 0.0),
            Err(Error::ZeroEnergy("interference"))
        ));
        assert!(matches!(
            compute_alpha(&buf(&[0.0, 0.0]), &n, 0.0),
            Err(Error::ZeroEnergy("speech"))
        ));
        assert!(compute_alpha(&s, &buf(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn measure_sir_examples() {
        let s = buf(&[1.0, 0.0]);
        assert!(measure_sir(&s, &s).unwrap().abs() < 1e-12);
        let n = buf(&[0.0, 0.5]);
        assert!((measure_sir(&s, &n).unwrap() - 6.020599913279624).abs() < 1e-9);
        assert!(measure_sir(&s, &buf(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn mix_examples() {
        let u = buf(&[0.3, -0.2]);
        let n = buf(&[0.9, 0.9]);
        assert_eq!(mix(&u, &n, 0.0).unwrap(), u);
        assert_eq!(mix(&buf(&[0.0, 0.0]), &n, 1.0).unwrap(), n);
        let y = mix(&buf(&[0.1]), &buf(&[0.4]), 0.5).unwrap();
        assert!((y.samples()[0] - 0.3).abs() < 1e-15);
        assert!(mix(&u, &buf(&[1.0]), 1.0).is_err());
        // no clipping inside mix
        assert_eq!(mix(&buf(&[0.9]), &buf(&[0.9]), 1.0).unwrap().samples(), &[1.8]);
    }

    fn random_bank() -> ReverberatedBank {
        let mut rng = seed::rng_from(5);
        let clips: Vec<(String, AudioBuffer)> = (0..3)
            .map(|i| {
                let xs: Vec<f64> = (0..2000 + 700 * i).map(|_| rng.random_range(-0.5..0.5)).collect();
                (format!("clip-{i}"), buf(&xs))
            })
            .collect();
        let rirs = vec![synth_rir(0.2, 300, 1).unwrap(), synth_rir(0.5, 800, 2).unwrap()];
        ReverberatedBank::build(&clips, &rirs, Execution::Parallel).unwrap()
    }

    #[test]
    fn corruption_is_keyed_by_id() {
        let bank = random_bank();
        let range = SirRange::new(0.0, 40.0).unwrap();
        let speech = buf(&(0..1500).map(|n| (n as f64 * 0.01).sin() * 0.3).collect::<Vec<_>>());
        let a = corrupt_utterance("utt-7", &speech, &bank, &range, 99).unwrap();
        let b = corrupt_utterance("utt-7", &speech, &bank, &range, 99).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.mixture, b.mixture);
        let c = corrupt_utterance("utt-8", &speech, &bank, &range, 99).unwrap();
        assert_ne!(a.record, c.record);
        let measured = measure_sir(&speech, &scale(&a.interference, a.record.alpha)).unwrap();
        assert!((measured - a.record.target_sir_db).abs() < 1e-6);
        let stored = bank.lookup(&a.record.interference_id, &a.record.rir_label).unwrap();
        assert_eq!(
            stored.slice(a.record.crop_offset, speech.len()).unwrap(),
            a.interference
        );
    }

    proptest! {
        #[test]
        fn sir_round_trip(
            s in prop::collection::vec(-1.0f64..1.0, 16..200),
            seed in any::<u64>(),
            target in -20.0f64..40.0,
        ) {
            let mut rng = seed::rng_from(seed);
            let n: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (s, n) = (buf(&s), buf(&n));
            prop_assume!(energy(&s) > 0.0);
            let a = compute_alpha(&s, &n, target).unwrap();
            let got = measure_sir(&s, &scale(&n, a)).unwrap();
            prop_assert!((got - target).abs() < 1e-6);
        }

        #[test]
        fn convolution_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 1..300),
            h in prop::collection::vec(-1.0f64..1.0, 1..300),
            a in -4.0f64..4.0,
        ) {
            let (xb, hr) = (buf(&x), rir(&h));
            let lhs = convolve(&scale(&xb, a), &hr).unwrap();
            let rhs = scale(&convolve(&xb, &hr).unwrap(), a);
            for (p, q) in lhs.samples().iter().zip(rhs.samples()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            prop_assert_eq!(convolve(&xb, &rir(&[1.0])).unwrap(), xb);
        }

        #[test]
        fn alpha_strictly_decreasing(
            s in prop::collection::vec(-1.0f64..1.0, 8..64),
            t1 in -20.0f64..40.0,
            dt in 0.01f64..10.0,
        ) {
            let s = buf(&s);
            prop_assume!(energy(&s) > 0.0);
            let n = buf(&vec![0.1; s.len()]);
            prop_assert!(compute_alpha(&s, &n, t1 + dt).unwrap() < compute_alpha(&s, &n, t1).unwrap());
        }
    }
}
