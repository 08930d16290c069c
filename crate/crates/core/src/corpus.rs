//! Synthetic keyword corpus and interference material.
//!
//! Phones are rendered as pairs of tones, so segment boundaries (and hence
//! frame targets) are known exactly from construction.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioBuffer, CANONICAL_RATE};
use crate::decoder::{ChainUnit, BG_NONSPEECH, BG_SPEECH, FIRST_KEYWORD_STATE};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::frontend::FeatureConfig;
use crate::manifest::{InterferenceEntry, InterferenceManifest, Label, ManifestEntry, Segment, Split, UtteranceManifest};
use crate::seed::{self, Rng};

pub const SILENCE: &str = "sil";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneSignature {
    pub symbol: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhoneSet {
    pub phones: Vec<PhoneSignature>,
}

impl Default for PhoneSet {
    fn default() -> Self {
        let table = [
            ("ax", 500.0, 1500.0),
            ("l", 350.0, 1000.0),
            ("eh", 650.0, 1900.0),
            ("k", 1200.0, 2700.0),
            ("s", 2000.0, 4000.0),
            ("aa", 800.0, 1200.0),
            ("iy", 300.0, 2400.0),
            ("uw", 400.0, 800.0),
            ("m", 250.0, 1300.0),
            ("n", 450.0, 2100.0),
            ("r", 700.0, 1600.0),
            ("t", 1500.0, 3300.0),
        ];
        Self {
            phones: table
                .iter()
                .map(|&(s, lo, hi)| PhoneSignature {
                    symbol: s.to_string(),
                    low_hz: lo,
                    high_hz: hi,
                })
                .collect(),
        }
    }
}

impl PhoneSet {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.phones.is_empty() {
            return Err(Error::Config("phone set is empty".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        for (i, p) in self.phones.iter().enumerate() {
            if p.symbol == SILENCE {
                return Err(Error::Config(format!("\"{SILENCE}\" is reserved")));
            }
            for f in [p.low_hz, p.high_hz] {
                if !(f > 0.0 && f < nyquist) {
                    return Err(Error::Config(format!(
                        "phone {} frequency {f} Hz outside (0, {nyquist})",
                        p.symbol
                    )));
                }
            }
            for q in &self.phones[..i] {
                if q.symbol == p.symbol {
                    return Err(Error::Config(format!("duplicate phone {}", p.symbol)));
                }
                if q.low_hz == p.low_hz && q.high_hz == p.high_hz {
                    return Err(Error::Config(format!(
                        "phones {} and {} share a signature",
                        q.symbol, p.symbol
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn symbols(&self) -> Vec<String> {
        self.phones.iter().map(|p| p.symbol.clone()).collect()
    }

    pub fn index(&self, symbol: &str) -> Result<usize> {
        self.phones
            .iter()
            .position(|p| p.symbol == symbol)
            .ok_or_else(|| Error::UnknownPhone(symbol.to_string()))
    }

    /// Auxiliary-head class of a phone; silence is the last class.
    pub fn aux_class(&self, symbol: &str) -> Result<usize> {
        if symbol == SILENCE {
            Ok(self.phones.len())
        } else {
            self.index(symbol)
        }
    }

    pub fn aux_classes(&self) -> usize {
        self.phones.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub keyword: Vec<String>,
    pub phone_set: PhoneSet,
    pub train_positive: usize,
    pub train_negative: usize,
    pub dev_positive: usize,
    pub dev_negative: usize,
    pub test_positive: usize,
    pub test_negative: usize,
    pub phone_ms: [f64; 2],
    pub silence_ms: [f64; 2],
    /// Filler phones on each side of the keyword.
    pub filler_phones: [usize; 2],
    /// Fraction of negatives that embed a partial keyword.
    pub confusable_fraction: f64,
    /// Peak amplitude of the additive uniform noise.
    pub noise_level: f64,
    /// Relative per-utterance detuning of the phone tones.
    pub frequency_jitter: f64,
    pub sample_rate: u32,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            keyword: ["ax", "l", "eh", "k", "s", "ax"].iter().map(|s| s.to_string()).collect(),
            phone_set: PhoneSet::default(),
            train_positive: 500,
            train_negative: 500,
            dev_positive: 100,
            dev_negative: 100,
            test_positive: 200,
            test_negative: 200,
            phone_ms: [60.0, 120.0],
            silence_ms: [100.0, 250.0],
            filler_phones: [1, 3],
            confusable_fraction: 0.3,
            noise_level: 0.02,
            frequency_jitter: 0.02,
            sample_rate: CANONICAL_RATE,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.phone_set.validate(self.sample_rate)?;
        if self.keyword.is_empty() {
            return Err(Error::Config("keyword phone sequence is empty".into()));
        }
        for p in &self.keyword {
            self.phone_set.index(p)?;
        }
        let counts = [
            self.train_positive,
            self.train_negative,
            self.dev_positive,
            self.dev_negative,
            self.test_positive,
            self.test_negative,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("every split needs at least one utterance per class".into()));
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(self.phone_ms) || !ordered(self.silence_ms) || self.filler_phones[0] > self.filler_phones[1] {
            return Err(Error::Config("duration and filler ranges must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.confusable_fraction) {
            return Err(Error::Config("confusable_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=0.1).contains(&self.noise_level) || !(0.0..0.5).contains(&self.frequency_jitter) {
            return Err(Error::Config("noise_level must lie in [0, 0.1] and frequency_jitter in [0, 0.5)".into()));
        }
        if self.phone_set.phones.len() < 2 {
            return Err(Error::Config("negatives need at least two phones to avoid the keyword".into()));
        }
        Ok(())
    }

    fn counts(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (self.train_positive, self.train_negative),
            Split::Dev => (self.dev_positive, self.dev_negative),
            Split::Test => (self.test_positive, self.test_negative),
        }
    }

    /// Every utterance id with its label and split, sorted by id.
    pub fn plan(&self) -> Vec<(String, Label, Split)> {
        let mut out = Vec::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            let (pos, neg) = self.counts(split);
            for i in 0..pos {
                out.push((format!("{}-kw-{i:05}", split.name()), Label::Keyword, split));
            }
            for i in 0..neg {
                out.push((format!("{}-nk-{i:05}", split.name()), Label::NonKeyword, split));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// True if `needle` occurs contiguously in `haystack`.
pub fn contains_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn random_phones(config: &CorpusConfig, n: usize, rng: &mut Rng) -> Vec<String> {
    let set = &config.phone_set.phones;
    (0..n).map(|_| set[rng.random_range(0..set.len())].symbol.clone()).collect()
}

/// Phone sequence (without silences) of one utterance.
fn phone_sequence(config: &CorpusConfig, label: Label, rng: &mut Rng) -> Vec<String> {
    let [lo, hi] = config.filler_phones;
    match label {
        Label::Keyword => {
            let left = rng.random_range(lo..=hi);
            let right = rng.random_range(lo..=hi);
            let mut seq = random_phones(config, left, rng);
            seq.extend(config.keyword.iter().cloned());
            seq.extend(random_phones(config, right, rng));
            seq
        }
        Label::NonKeyword => {
            let k = config.keyword.len();
            let len = rng.random_range(k + 2 * lo..=k + 2 * hi);
            loop {
                let mut seq = random_phones(config, len, rng);
                if k >= 2 && rng.random::<f64>() < config.confusable_fraction {
                    // a keyword prefix or suffix, never the whole keyword
                    let frag = rng.random_range(k.div_ceil(2)..k);
                    let part = if rng.random::<bool>() {
                        &config.keyword[..frag]
                    } else {
                        &config.keyword[k - frag..]
                    };
                    let at = rng.random_range(0..=len - frag);
                    seq[at..at + frag].clone_from_slice(part);
                }
                if !contains_subsequence(&seq, &config.keyword) {
                    return seq;
                }
            }
        }
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Render one utterance from a generator keyed by its id.
pub fn render_utterance(config: &CorpusConfig, id: &str, label: Label, split: Split) -> Result<(ManifestEntry, AudioBuffer)> {
    let mut rng = seed::rng_from(seed::utterance_seed(config.seed, id));
    let rate = config.sample_rate;
    let phones = phone_sequence(config, label, &mut rng);
    let mut symbols = vec![SILENCE.to_string()];
    symbols.extend(phones);
    symbols.push(SILENCE.to_string());

    let gain = rng.random_range(0.3..0.8);
    let detune = 1.0 + rng.random_range(-1.0..=1.0) * config.frequency_jitter;
    let fade = ms_to_samples(4.0, rate);
    let mut samples: Vec<f64> = Vec::new();
    let mut segments = Vec::with_capacity(symbols.len());
    for sym in &symbols {
        let range = if sym == SILENCE { config.silence_ms } else { config.phone_ms };
        let len = ms_to_samples(rng.random_range(range[0]..=range[1]), rate).max(1);
        let start = samples.len();
        if sym == SILENCE {
            samples.resize(start + len, 0.0);
        } else {
            let sig = &config.phone_set.phones[config.phone_set.index(sym)?];
            let tones = [
                (sig.low_hz * detune, rng.random_range(0.0..2.0 * PI)),
                (sig.high_hz * detune, rng.random_range(0.0..2.0 * PI)),
            ];
            for n in 0..len {
                let t = n as f64 / rate as f64;
                let edge = n.min(len - 1 - n);
                let ramp = if edge < fade {
                    0.5 * (1.0 - (PI * edge as f64 / fade as f64).cos())
                } else {
                    1.0
                };
                let v: f64 = tones.iter().map(|&(f, ph)| (2.0 * PI * f * t + ph).sin()).sum();
                samples.push(0.5 * gain * ramp * v);
            }
        }
        segments.push(Segment {
            phone: sym.clone(),
            start,
            end: samples.len(),
        });
    }
    for s in &mut samples {
        *s += rng.random_range(-1.0..=1.0) * config.noise_level;
    }
    let entry = ManifestEntry {
        id: id.to_string(),
        wav: format!("wavs/{id}.wav"),
        label,
        phones: symbols,
        split: Some(split),
        segments,
        target_sir_db: None,
        interference_id: None,
        rir_label: None,
        alpha: None,
        crop_offset: None,
    };
    Ok((entry, AudioBuffer::new(samples, rate)?))
}

/// Render the whole corpus into `out_dir`.
///
/// Writes `wavs/`, `manifest.jsonl` and one `<split>.jsonl` per split, all
/// sorted by id.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path, exec: Execution) -> Result<UtteranceManifest> {
    config.validate()?;
    let wav_dir = out_dir.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let plan = config.plan();
    let entries = exec::map(exec, &plan, |(id, label, split)| -> Result<ManifestEntry> {
        let (entry, audio) = render_utterance(config, id, *label, *split)?;
        audio::save_wav(&audio, out_dir.join(&entry.wav))?;
        Ok(entry)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let manifest = UtteranceManifest {
        dir: out_dir.to_path_buf(),
        entries,
    };
    manifest.write(out_dir.join("manifest.jsonl"))?;
    for split in [Split::Train, Split::Dev, Split::Test] {
        let part: Vec<ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.split == Some(split))
            .cloned()
            .collect();
        crate::manifest::write_jsonl(out_dir.join(format!("{}.jsonl", split.name())), &part)?;
    }
    Ok(manifest)
}

/// Label-preserving seeded partition into train/dev/test.
///
/// Each class is shuffled and cut by largest-remainder rounding of its
/// size times the ratios, so every split mirrors the global class balance.
pub fn split_manifest(entries: &[ManifestEntry], ratios: [f64; 3], seed: u64) -> Result<[Vec<ManifestEntry>; 3]> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let mut rng = seed::rng_from(seed);
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out: [Vec<ManifestEntry>; 3] = Default::default();
    for label in [Label::Keyword, Label::NonKeyword] {
        let mut class: Vec<&ManifestEntry> = sorted.iter().copied().filter(|e| e.label == label).collect();
        class.shuffle(&mut rng);
        let n = class.len();
        let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut short = n - sizes.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if short == 0 {
                break;
            }
            sizes[i] += 1;
            short -= 1;
        }
        let mut it = class.into_iter();
        for (s, &size) in sizes.iter().enumerate() {
            let split = [Split::Train, Split::Dev, Split::Test][s];
            out[s].extend(it.by_ref().take(size).map(|e| ManifestEntry {
                split: Some(split),
                ..e.clone()
            }));
        }
    }
    if let Some(s) = out.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "split {} would be empty",
            [Split::Train, Split::Dev, Split::Test][s].name()
        )));
    }
    for part in &mut out {
        part.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(out)
}

/// Keyword-head class count for a keyword under `states_per_phone`.
pub fn keyword_states(config: &CorpusConfig, states_per_phone: usize) -> usize {
    FIRST_KEYWORD_STATE + config.keyword.len() * states_per_phone
}

/// Index of the first segment of the keyword occurrence, if any.
fn keyword_start(entry: &ManifestEntry, keyword: &[String]) -> Option<usize> {
    if !entry.is_keyword() {
        return None;
    }
    entry
        .segments
        .windows(keyword.len())
        .position(|w| w.iter().zip(keyword).all(|(s, k)| &s.phone == k))
}

/// Forced chain of an utterance: one unit per segment, or per substate
/// inside the keyword.
pub fn chain_units(entry: &ManifestEntry, config: &CorpusConfig, states_per_phone: usize) -> Result<Vec<ChainUnit>> {
    let kw = keyword_start(entry, &config.keyword);
    let mut out = Vec::new();
    for (i, seg) in entry.segments.iter().enumerate() {
        let phone = config.phone_set.aux_class(&seg.phone)?;
        match kw {
            Some(k) if (k..k + config.keyword.len()).contains(&i) => {
                for sub in 0..states_per_phone {
                    out.push(ChainUnit {
                        state: FIRST_KEYWORD_STATE + (i - k) * states_per_phone + sub,
                        phone,
                    });
                }
            }
            _ => out.push(ChainUnit {
                state: if seg.phone == SILENCE { BG_NONSPEECH } else { BG_SPEECH },
                phone,
            }),
        }
    }
    Ok(out)
}

/// Frame targets for both heads, read off the known segmentation.
///
/// A frame belongs to the segment containing its centre sample; keyword
/// phones split their frames evenly over substates.
pub fn construction_targets(
    entry: &ManifestEntry,
    num_samples: usize,
    config: &CorpusConfig,
    features: &FeatureConfig,
    states_per_phone: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if entry.segments.is_empty() {
        return Err(Error::InvalidArgument(format!("utterance {} has no segmentation", entry.id)));
    }
    let kw = keyword_start(entry, &config.keyword);
    let frames = features.frame_count(num_samples);
    let (win, hop) = (features.window_samples(), features.hop_samples());
    let mut kw_t = Vec::with_capacity(frames);
    let mut aux_t = Vec::with_capacity(frames);
    let mut seg = 0;
    for t in 0..frames {
        let centre = t * hop + win / 2;
        while seg + 1 < entry.segments.len() && centre >= entry.segments[seg].end {
            seg += 1;
        }
        let s = &entry.segments[seg];
        aux_t.push(config.phone_set.aux_class(&s.phone)?);
        kw_t.push(match kw {
            Some(k) if (k..k + config.keyword.len()).contains(&seg) => {
                let within = centre.saturating_sub(s.start).min(s.end - s.start - 1);
                let sub = within * states_per_phone / (s.end - s.start);
                FIRST_KEYWORD_STATE + (seg - k) * states_per_phone + sub
            }
            _ if s.phone == SILENCE => BG_NONSPEECH,
            _ => BG_SPEECH,
        });
    }
    Ok((kw_t, aux_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceKind {
    Music,
    Movie,
}

impl InterferenceKind {
    pub fn name(self) -> &'static str {
        match self {
            InterferenceKind::Music => "music",
            InterferenceKind::Movie => "movie",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub start: usize,
    pub len: usize,
    pub fundamental_hz: f64,
}

const PARTIALS: [f64; 3] = [1.0, 0.6, 0.4];

/// Harmonic notes (fundamental plus two overtones) back to back.
pub fn render_music(num_samples: usize, sample_rate: u32, rng: &mut Rng) -> (Vec<f64>, Vec<Note>) {
    let rate = sample_rate as f64;
    let mut out = vec![0.0; num_samples];
    let mut notes = Vec::new();
    let mut start = 0;
    while start < num_samples {
        let len = ((rng.random_range(0.5..=2.0) * rate) as usize).min(num_samples - start);
        let f0 = 110.0 * 4f64.powf(rng.random::<f64>());
        let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let attack = (0.01 * rate) as usize;
        let decay = rng.random_range(0.5..2.0);
        for n in 0..len {
            let t = n as f64 / rate;
            let env = (n as f64 / attack as f64).min(1.0) * (-t / decay).exp();
            let v: f64 = PARTIALS
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, ph))| a * (2.0 * PI * f0 * (k + 1) as f64 * t + ph).sin())
                .sum();
            out[start + n] = env * v;
        }
        notes.push(Note {
            start,
            len,
            fundamental_hz: f0,
        });
        start += len;
    }
    (out, notes)
}

/// RBJ low-pass biquad.
fn lowpass(x: &mut [f64], cutoff_hz: f64, sample_rate: f64) {
    let w0 = 2.0 * PI * cutoff_hz / sample_rate;
    let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
    let cos = w0.cos();
    let a0 = 1.0 + alpha;
    let b0 = (1.0 - cos) / 2.0 / a0;
    let b1 = (1.0 - cos) / a0;
    let b2 = b0;
    let a1 = -2.0 * cos / a0;
    let a2 = (1.0 - alpha) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Speech-shaped noise bursts alternating with isolated tones.
pub fn render_movie(num_samples: usize, sample_rate: u32, rng: &mut Rng) -> Vec<f64> {
    let rate = sample_rate as f64;
    let mut out = Vec::with_capacity(num_samples);
    let mut burst = true;
    while out.len() < num_samples {
        let remaining = num_samples - out.len();
        if burst {
            let len = ((rng.random_range(0.3..=1.5) * rate) as usize).min(remaining);
            let mut x: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            lowpass(&mut x, rng.random_range(800.0..3000.0), rate);
            let syllable_hz = rng.random_range(3.0..6.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            for (n, v) in x.iter_mut().enumerate() {
                let t = n as f64 / rate;
                *v *= 0.55 - 0.45 * (2.0 * PI * syllable_hz * t + phase).cos();
            }
            out.extend(x);
        } else {
            let len = ((rng.random_range(0.2..=1.0) * rate) as usize).min(remaining);
            let f = rng.random_range(200.0..2000.0);
            let amp = rng.random_range(0.3..1.0);
            let ramp = (0.01 * rate) as usize;
            for n in 0..len {
                let edge = n.min(len - 1 - n) as f64;
                let env = (edge / ramp as f64).min(1.0);
                out.push(amp * env * (2.0 * PI * f * n as f64 / rate).sin());
            }
        }
        burst = !burst;
    }
    out
}

/// Render `total_seconds` of interference, peak-normalised to 0.5 and cut
/// into clips of at most `clip_seconds`.
pub fn generate_interference(
    kind: InterferenceKind,
    total_seconds: f64,
    clip_seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<(InterferenceEntry, AudioBuffer)>> {
    if !(total_seconds >= 1.0) || !(clip_seconds >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "interference needs at least 1 s in total and per clip, got {total_seconds} s and {clip_seconds} s"
        )));
    }
    let mut rng = seed::rng_from(seed);
    let n = (total_seconds * sample_rate as f64).round() as usize;
    let mut signal = match kind {
        InterferenceKind::Music => render_music(n, sample_rate, &mut rng).0,
        InterferenceKind::Movie => render_movie(n, sample_rate, &mut rng),
    };
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut signal {
            *v *= 0.5 / peak;
        }
    }
    let clip = (clip_seconds * sample_rate as f64).round() as usize;
    signal
        .chunks(clip)
        .enumerate()
        .map(|(i, c)| {
            let id = format!("{}-{i:03}", kind.name());
            let audio = AudioBuffer::new(c.to_vec(), sample_rate)?;
            Ok((
                InterferenceEntry {
                    wav: format!("{id}.wav"),
                    id,
                    kind: kind.name().to_string(),
                    seconds: audio.duration_seconds(),
                },
                audio,
            ))
        })
        .collect()
}

/// Write clips and their `manifest.jsonl` into `dir`.
pub fn write_interference(clips: &[(InterferenceEntry, AudioBuffer)], dir: &Path) -> Result<InterferenceManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, audio) in clips {
        audio::save_wav(audio, dir.join(&entry.wav))?;
    }
    let manifest = InterferenceManifest {
        dir: dir.to_path_buf(),
        entries: clips.iter().map(|(e, _)| e.clone()).collect(),
    };
    manifest.write(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
