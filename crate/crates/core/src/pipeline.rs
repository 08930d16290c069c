//! Experiment driver: corpus generation, augmentation, training, decoding
//! and evaluation as resumable stages under one output directory.
//!
//! ```text
//! <out>/corpus/clean/            clean corpus, split manifests
//! <out>/interference/<kind>-<role>/
//! <out>/corpora/<name>/          corrupted copies (training specs and test conditions)
//! <out>/models/<name>.json
//! <out>/detections/<model>/<condition>.jsonl
//! <out>/eval/<condition>/        det.csv, det.svg, auc.json
//! <out>/summary.txt, summary.csv
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio;
use crate::augment::{self, synth_rir, ReverberatedBank, RoomImpulseResponse, SirRange};
use crate::corpus::{self, CorpusConfig, InterferenceKind};
use crate::decoder::{self, build_kws_graph, viterbi, BackgroundLoop, ChainUnit, Detection, HmmTopology};
use crate::error::{Error, Result};
use crate::eval::{auc, det_curve, emit_plot_data, lower_envelope, relative_reduction, DetCurve, TrialSet};
use crate::exec::{self, Execution};
use crate::frontend::{compute_features, FeatureConfig, FeatureMatrix};
use crate::manifest::{self, InterferenceManifest, ManifestEntry, Split, UtteranceManifest};
use crate::model::{self, estimate_priors, init_model, train, AcousticModel, EpochStats, ModelConfig, TrainingSet};
use crate::seed::derive_seed;

pub const CLEAN: &str = "clean";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    /// Read frame targets off the known segmentation.
    #[default]
    Construction,
    /// Re-derive them by forced alignment of the clean audio.
    Alignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub loss_weight_keyword: f64,
    pub loss_weight_aux: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub halve_on_plateau: bool,
    pub target_source: TargetSource,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        Self {
            hidden_layers: m.hidden_layers,
            hidden_units: m.hidden_units,
            loss_weight_keyword: m.loss_weight_keyword,
            loss_weight_aux: m.loss_weight_aux,
            learning_rate: m.learning_rate,
            batch_size: m.batch_size,
            epochs: m.epochs,
            halve_on_plateau: m.halve_on_plateau,
            target_source: TargetSource::Construction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSettings {
    pub states_per_phone: usize,
    pub self_loop_prob: f64,
    pub background: BackgroundLoop,
    pub entry_penalties: Vec<f64>,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        Self {
            states_per_phone: 1,
            self_loop_prob: 0.5,
            background: BackgroundLoop::default(),
            entry_penalties: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSettings {
    pub far_range: [f64; 2],
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self { far_range: [0.01, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterferenceSettings {
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub clip_seconds: f64,
}

impl Default for InterferenceSettings {
    fn default() -> Self {
        Self {
            train_seconds: 300.0,
            test_seconds: 120.0,
            clip_seconds: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RirSettings {
    pub count: usize,
    pub rt60_seconds: [f64; 2],
    pub length_seconds: f64,
}

impl Default for RirSettings {
    fn default() -> Self {
        Self {
            count: 4,
            rt60_seconds: [0.2, 0.6],
            length_seconds: 0.25,
        }
    }
}

/// A named training corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationDef {
    pub name: String,
    pub kind: InterferenceKind,
    pub sir_db: [f64; 2],
}

/// A named test condition; without `kind` the clean test split is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<InterferenceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sir_db: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    pub model: ModelSettings,
    pub decoder: DecoderSettings,
    pub evaluation: EvaluationSettings,
    pub interference: InterferenceSettings,
    pub rir: RirSettings,
    pub augmentation: Vec<AugmentationDef>,
    pub test_condition: Vec<ConditionDef>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let aug = |name: &str, kind, lo, hi| AugmentationDef {
            name: name.into(),
            kind,
            sir_db: [lo, hi],
        };
        Self {
            seed: 1,
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            model: ModelSettings::default(),
            decoder: DecoderSettings::default(),
            evaluation: EvaluationSettings::default(),
            interference: InterferenceSettings::default(),
            rir: RirSettings::default(),
            augmentation: vec![
                aug("music-0-40", InterferenceKind::Music, 0.0, 40.0),
                aug("music-m20-40", InterferenceKind::Music, -20.0, 40.0),
                aug("movie-0-40", InterferenceKind::Movie, 0.0, 40.0),
            ],
            test_condition: vec![
                ConditionDef {
                    name: CLEAN.into(),
                    kind: None,
                    sir_db: None,
                },
                ConditionDef {
                    name: "playback".into(),
                    kind: Some(InterferenceKind::Music),
                    sir_db: Some([-10.0, 10.0]),
                },
            ],
        }
        .with_seed(1)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.corpus.seed = derive_seed(c.seed, "corpus");
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = derive_seed(seed, "corpus");
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.features.validate()?;
        self.model_config()?.validate()?;
        self.topology()?;
        if self.decoder.entry_penalties.is_empty() || self.decoder.entry_penalties.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("decoder.entry_penalties must be non-empty and finite".into()));
        }
        check_far_range(self.evaluation.far_range)?;
        if self.rir.count == 0 || self.rir.length_seconds <= 0.0 || self.rir.rt60_seconds[0] <= 0.0 || self.rir.rt60_seconds[0] > self.rir.rt60_seconds[1] {
            return Err(Error::Config("rir settings need count >= 1, positive length and an ordered rt60 range".into()));
        }
        let mut names = HashSet::new();
        for a in &self.augmentation {
            if a.name == CLEAN || !names.insert(a.name.as_str()) || !valid_name(&a.name) {
                return Err(Error::Config(format!("augmentation name {:?} is reserved, repeated or not a plain file name", a.name)));
            }
            SirRange::new(a.sir_db[0], a.sir_db[1]).map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut conds = HashSet::new();
        for c in &self.test_condition {
            if !conds.insert(c.name.as_str()) || !valid_name(&c.name) || names.contains(c.name.as_str()) {
                return Err(Error::Config(format!("test condition name {:?} is repeated, clashes or is not a plain file name", c.name)));
            }
            match (c.kind, c.sir_db) {
                (None, None) => {}
                (Some(_), Some(r)) => {
                    SirRange::new(r[0], r[1]).map_err(|e| Error::Config(e.to_string()))?;
                }
                _ => return Err(Error::Config(format!("test condition {:?} needs both kind and sir_db, or neither", c.name))),
            }
        }
        if self.test_condition.is_empty() {
            return Err(Error::Config("at least one test condition is required".into()));
        }
        Ok(())
    }

    pub fn model_names(&self) -> Vec<String> {
        std::iter::once(CLEAN.to_string())
            .chain(self.augmentation.iter().map(|a| a.name.clone()))
            .collect()
    }

    pub fn topology(&self) -> Result<HmmTopology> {
        HmmTopology::new(self.decoder.states_per_phone, self.decoder.self_loop_prob)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        Ok(ModelConfig {
            hidden_layers: m.hidden_layers,
            hidden_units: m.hidden_units,
            keyword_states: corpus::keyword_states(&self.corpus, self.decoder.states_per_phone),
            aux_phones: self.corpus.phone_set.aux_classes(),
            loss_weight_keyword: m.loss_weight_keyword,
            loss_weight_aux: m.loss_weight_aux,
            learning_rate: m.learning_rate,
            batch_size: m.batch_size,
            epochs: m.epochs,
            init_seed: derive_seed(self.seed, "model-init"),
            halve_on_plateau: m.halve_on_plateau,
        })
    }

    fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).unwrap_or_default().as_bytes())
    }

    fn kinds(&self) -> Vec<InterferenceKind> {
        let mut kinds: Vec<InterferenceKind> = self
            .augmentation
            .iter()
            .map(|a| a.kind)
            .chain(self.test_condition.iter().filter_map(|c| c.kind))
            .collect();
        kinds.sort_by_key(|k| k.name());
        kinds.dedup();
        kinds
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn check_far_range(r: [f64; 2]) -> Result<()> {
    if !(r[0] >= 0.0 && r[0] < r[1] && r[1] <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "FAR range must satisfy 0 <= low < high <= 1, got [{}, {}]",
            r[0], r[1]
        )));
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Provenance written beside every stage's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Input file (relative to the output root) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub inputs_hash: String,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

/// Shared state of one invocation.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Execution,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>, exec: Execution) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            out: out.into(),
            exec,
        })
    }

    pub fn clean_dir(&self) -> PathBuf {
        self.out.join("corpus").join(CLEAN)
    }

    pub fn interference_dir(&self, kind: InterferenceKind, role: &str) -> PathBuf {
        self.out.join("interference").join(format!("{}-{role}", kind.name()))
    }

    pub fn corpus_dir(&self, name: &str) -> PathBuf {
        self.out.join("corpora").join(name)
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.out.join("models").join(format!("{name}.json"))
    }

    pub fn detections_path(&self, model: &str, condition: &str) -> PathBuf {
        self.out.join("detections").join(model).join(format!("{condition}.jsonl"))
    }

    pub fn eval_dir(&self, condition: &str) -> PathBuf {
        self.out.join("eval").join(condition)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn require(&self, path: PathBuf, producer: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                path,
                producer: producer.to_string(),
            })
        }
    }

    fn record(&self, command: String, inputs: &[PathBuf], outputs: &[PathBuf], details: serde_json::Value, at: &Path) -> Result<()> {
        let mut map = BTreeMap::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            map.insert(self.rel(p), sha256_hex(&bytes));
        }
        let joined: String = map.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let rec = RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config_hash: self.config.hash(),
            inputs_hash: sha256_hex(joined.as_bytes()),
            inputs: map,
            outputs: outputs.iter().map(|p| self.rel(p)).collect(),
            details,
        };
        let text = serde_json::to_string_pretty(&rec)? + "\n";
        fs::write(at, text).map_err(|e| Error::io(at, e))
    }

    fn load_clean(&self) -> Result<UtteranceManifest> {
        let p = self.require(self.clean_dir().join("manifest.jsonl"), "gen-corpus")?;
        UtteranceManifest::read(p)
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn cmd_gen_corpus(x: &Experiment) -> Result<UtteranceManifest> {
    let c = &x.config;
    let dir = x.clean_dir();
    let manifest = corpus::generate_corpus(&c.corpus, &dir, x.exec)?;
    let mut outputs = vec![dir.join("manifest.jsonl")];
    for split in [Split::Train, Split::Dev, Split::Test] {
        outputs.push(dir.join(format!("{}.jsonl", split.name())));
    }
    for kind in c.kinds() {
        for (role, seconds) in [("train", c.interference.train_seconds), ("test", c.interference.test_seconds)] {
            let seed = derive_seed(c.seed, &format!("interference/{}/{role}", kind.name()));
            let clips = corpus::generate_interference(kind, seconds, c.interference.clip_seconds, c.corpus.sample_rate, seed)?;
            let d = x.interference_dir(kind, role);
            corpus::write_interference(&clips, &d)?;
            outputs.push(d.join("manifest.jsonl"));
        }
    }
    x.record("gen-corpus".into(), &[], &outputs, serde_json::Value::Null, &x.out.join("corpus").join("run.json"))?;
    Ok(manifest)
}

/// Synthetic impulse responses for one role ("train" or "test").
pub fn rir_set(config: &ExperimentConfig, role: &str) -> Result<Vec<RoomImpulseResponse>> {
    let r = &config.rir;
    let len = (r.length_seconds * config.corpus.sample_rate as f64).round() as usize;
    (0..r.count)
        .map(|i| {
            let t = if r.count == 1 { 0.0 } else { i as f64 / (r.count - 1) as f64 };
            let rt60 = r.rt60_seconds[0] + t * (r.rt60_seconds[1] - r.rt60_seconds[0]);
            let mut rir = synth_rir(rt60, len, derive_seed(config.seed, &format!("rir/{role}/{i}")))?;
            rir.sample_rate = config.corpus.sample_rate;
            rir.label = format!("{role}-{i}-{}", rir.label);
            Ok(rir)
        })
        .collect()
}

/// Corrupt the training material for a named augmentation, or the test
/// split for a named test condition.
pub fn cmd_augment(x: &Experiment, name: &str) -> Result<UtteranceManifest> {
    let c = &x.config;
    let (kind, sir, role, splits): (InterferenceKind, [f64; 2], &str, &[Split]) =
        if let Some(a) = c.augmentation.iter().find(|a| a.name == name) {
            (a.kind, a.sir_db, "train", &[Split::Train, Split::Dev])
        } else if let Some(t) = c.test_condition.iter().find(|t| t.name == name) {
            match (t.kind, t.sir_db) {
                (Some(k), Some(s)) => (k, s, "test", &[Split::Test]),
                _ => return Err(Error::InvalidArgument(format!("test condition {name:?} uses clean audio and needs no augmentation"))),
            }
        } else {
            return Err(Error::InvalidArgument(format!("unknown augmentation or test condition {name:?}")));
        };
    let clean = x.load_clean()?;
    let source = UtteranceManifest {
        dir: clean.dir.clone(),
        entries: clean
            .entries
            .iter()
            .filter(|e| e.split.is_some_and(|s| splits.contains(&s)))
            .cloned()
            .collect(),
    };
    let interference_path = x.require(x.interference_dir(kind, role).join("manifest.jsonl"), "gen-corpus")?;
    let interference = InterferenceManifest::read(&interference_path)?;
    let clips = interference
        .entries
        .iter()
        .map(|e| Ok((e.id.clone(), audio::load_wav(interference.resolve(&e.wav))?)))
        .collect::<Result<Vec<_>>>()?;
    let bank = ReverberatedBank::build(&clips, &rir_set(c, role)?, x.exec)?;
    let dir = x.corpus_dir(name);
    let out = augment::augment_with_bank(
        &source,
        &bank,
        &SirRange::new(sir[0], sir[1])?,
        derive_seed(c.seed, &format!("augment/{name}")),
        &dir,
        x.exec,
    )?;
    manifest::write_jsonl(dir.join("records.jsonl"), &out.records)?;
    let details = serde_json::json!({ "failures": out.failures });
    x.record(
        format!("augment {name}"),
        &[x.clean_dir().join("manifest.jsonl"), interference_path],
        &[dir.join("manifest.jsonl"), dir.join("records.jsonl")],
        details,
        &dir.join("run.json"),
    )?;
    Ok(out.manifest)
}

/// Manifest a model of this name trains on.
fn training_manifest(x: &Experiment, name: &str) -> Result<(UtteranceManifest, PathBuf)> {
    if name == CLEAN {
        let p = x.require(x.clean_dir().join("manifest.jsonl"), "gen-corpus")?;
        Ok((UtteranceManifest::read(&p)?, p))
    } else if x.config.augmentation.iter().any(|a| a.name == name) {
        let p = x.require(x.corpus_dir(name).join("manifest.jsonl"), &format!("augment {name}"))?;
        Ok((UtteranceManifest::read(&p)?, p))
    } else {
        Err(Error::InvalidArgument(format!("unknown model/corpus name {name:?}")))
    }
}

struct Utterance {
    features: FeatureMatrix,
    kw: Vec<usize>,
    aux: Vec<usize>,
}

fn featurize(x: &Experiment, manifest: &UtteranceManifest, split: Split) -> Result<Vec<Utterance>> {
    let c = &x.config;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.split == Some(split)).collect();
    exec::map(x.exec, &entries, |e| {
        let a = audio::load_wav(manifest.resolve(&e.wav))?;
        let features = compute_features(&a, &c.features)?;
        let (kw, aux) = corpus::construction_targets(e, a.len(), &c.corpus, &c.features, c.decoder.states_per_phone)?;
        Ok(Utterance { features, kw, aux })
    })
    .into_iter()
    .collect()
}

fn fit(x: &Experiment, data: &[Utterance]) -> Result<(AcousticModel, Vec<EpochStats>)> {
    let set = TrainingSet::from_utterances(data.iter().map(|u| (&u.features, u.kw.as_slice(), u.aux.as_slice())))?;
    let mc = x.config.model_config()?;
    let m = init_model(&mc, set.features.ncols())?;
    let (mut m, history) = train(m, &set, derive_seed(x.config.seed, "shuffle"))?;
    m.state_priors = estimate_priors(&set.kw_targets, mc.keyword_states);
    Ok((m, history))
}

/// Replace targets with forced alignments of the clean audio under `aligner`.
fn realign(x: &Experiment, aligner: &AcousticModel, clean: &UtteranceManifest, ids: &[String], data: &mut [Utterance]) -> Result<()> {
    let c = &x.config;
    let by_id: HashMap<&str, &ManifestEntry> = clean.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let topo = c.topology()?;
    let aligned = exec::map(x.exec, ids, |id| -> Result<(Vec<usize>, Vec<usize>)> {
        let e = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("no clean counterpart for {id}")))?;
        let a = audio::load_wav(clean.resolve(&e.wav))?;
        let f = compute_features(&a, &c.features)?;
        let (kw, aux) = aligner.forward(&f)?;
        let chain: Vec<ChainUnit> = corpus::chain_units(e, &c.corpus, c.decoder.states_per_phone)?;
        let al = decoder::forced_align(&chain, &kw, Some(&aux), &topo)?;
        Ok((al.states, al.phones))
    });
    for (u, r) in data.iter_mut().zip(aligned) {
        let (kw, aux) = r?;
        u.kw = kw;
        u.aux = aux;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub model: String,
    pub frames: usize,
    pub history: Vec<EpochStats>,
    /// Keyword-head frame accuracy on the dev split.
    pub dev_frame_accuracy: f64,
    /// Auxiliary phone-head frame accuracy on the dev split.
    pub dev_phone_accuracy: f64,
}

pub fn cmd_train(x: &Experiment, name: &str) -> Result<(AcousticModel, TrainReport)> {
    let (manifest, manifest_path) = training_manifest(x, name)?;
    let mut data = featurize(x, &manifest, Split::Train)?;
    let mut inputs = vec![manifest_path];
    if x.config.model.target_source == TargetSource::Alignment {
        let clean_path = x.require(x.clean_dir().join("manifest.jsonl"), "gen-corpus")?;
        let clean = UtteranceManifest::read(&clean_path)?;
        let clean_train = featurize(x, &clean, Split::Train)?;
        let (aligner, _) = fit(x, &clean_train)?;
        let ids: Vec<String> = manifest
            .entries
            .iter()
            .filter(|e| e.split == Some(Split::Train))
            .map(|e| e.id.clone())
            .collect();
        realign(x, &aligner, &clean, &ids, &mut data)?;
        if name != CLEAN {
            inputs.push(clean_path);
        }
    }
    let (m, history) = fit(x, &data)?;
    let dev = featurize(x, &manifest, Split::Dev)?;
    let (mut hits, mut phone_hits, mut total) = (0.0, 0.0, 0usize);
    for u in &dev {
        let (kw, aux) = m.forward(&u.features)?;
        hits += model::frame_accuracy(&kw, &u.kw) * u.kw.len() as f64;
        phone_hits += model::frame_accuracy(&aux, &u.aux) * u.aux.len() as f64;
        total += u.kw.len();
    }
    let rate = |h: f64| if total == 0 { 0.0 } else { h / total as f64 };
    let report = TrainReport {
        model: name.to_string(),
        frames: data.iter().map(|u| u.kw.len()).sum(),
        history,
        dev_frame_accuracy: rate(hits),
        dev_phone_accuracy: rate(phone_hits),
    };
    let path = x.model_path(name);
    mkdir(path.parent().unwrap())?;
    m.save(&path)?;
    x.record(
        format!("train {name}"),
        &inputs,
        std::slice::from_ref(&path),
        serde_json::to_value(&report)?,
        &path.with_extension("run.json"),
    )?;
    Ok((m, report))
}

/// Labels manifest of a test condition.
fn condition_manifest(x: &Experiment, condition: &str) -> Result<(UtteranceManifest, PathBuf)> {
    let def = x
        .config
        .test_condition
        .iter()
        .find(|c| c.name == condition)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown test condition {condition:?}")))?;
    let p = if def.kind.is_none() {
        x.require(x.clean_dir().join("test.jsonl"), "gen-corpus")?
    } else {
        x.require(x.corpus_dir(condition).join("manifest.jsonl"), &format!("augment {condition}"))?
    };
    Ok((UtteranceManifest::read(&p)?, p))
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub id: String,
    #[serde(flatten)]
    pub detection: Detection,
}

pub fn cmd_decode(x: &Experiment, model_name: &str, condition: &str) -> Result<Vec<DetectionLine>> {
    let c = &x.config;
    let model_path = x.require(x.model_path(model_name), &format!("train {model_name}"))?;
    let m = AcousticModel::load(&model_path)?;
    let (manifest, manifest_path) = condition_manifest(x, condition)?;
    let graph = build_kws_graph(
        &c.corpus.keyword,
        &c.corpus.phone_set.symbols(),
        &c.topology()?,
        &c.decoder.background,
        0.0,
    )?;
    let graphs: Vec<_> = c.decoder.entry_penalties.iter().map(|&p| graph.with_entry_penalty(p)).collect();
    let mut entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let per_utt = exec::map(x.exec, &entries, |e| -> Result<Vec<DetectionLine>> {
        let a = audio::load_wav(manifest.resolve(&e.wav))?;
        let f = compute_features(&a, &c.features)?;
        let (kw, _) = m.forward(&f)?;
        let mut out = Vec::new();
        for g in &graphs {
            for d in viterbi(g, &kw, &m.state_priors)?.detections {
                out.push(DetectionLine {
                    id: e.id.clone(),
                    detection: d,
                });
            }
        }
        Ok(out)
    });
    let mut lines = Vec::new();
    for r in per_utt {
        lines.extend(r?);
    }
    let path = x.detections_path(model_name, condition);
    mkdir(path.parent().unwrap())?;
    manifest::write_jsonl(&path, &lines)?;
    x.record(
        format!("decode {model_name} {condition}"),
        &[model_path, manifest_path],
        std::slice::from_ref(&path),
        serde_json::Value::Null,
        &path.with_extension("run.json"),
    )?;
    Ok(lines)
}

/// DET curve over the penalty × threshold grid, from one detections file.
pub fn curve_from_detections(labels: &[ManifestEntry], lines: &[DetectionLine]) -> Result<DetCurve> {
    let mut penalties: Vec<f64> = lines.iter().map(|l| l.detection.entry_penalty).collect();
    penalties.sort_by(f64::total_cmp);
    penalties.dedup();
    if penalties.is_empty() {
        // nothing fired anywhere: every keyword is missed
        penalties.push(f64::NAN);
    }
    let mut points = Vec::new();
    for &p in &penalties {
        let mut best: HashMap<&str, f64> = HashMap::new();
        for l in lines.iter().filter(|l| l.detection.entry_penalty.total_cmp(&p).is_eq()) {
            let s = best.entry(l.id.as_str()).or_insert(f64::NEG_INFINITY);
            *s = s.max(l.detection.score);
        }
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for e in labels {
            let t = (e.id.clone(), best.get(e.id.as_str()).copied());
            if e.is_keyword() {
                pos.push(t);
            } else {
                neg.push(t);
            }
        }
        let curve = det_curve(&TrialSet::new(pos, neg)?)?;
        points.extend(curve.points.into_iter().map(|mut q| {
            q.entry_penalty = if p.is_nan() { None } else { Some(p) };
            q
        }));
    }
    Ok(DetCurve {
        points: lower_envelope(&points),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelScore {
    pub model: String,
    pub auc: f64,
    /// Percentage AUC reduction relative to the clean-trained model.
    pub reduction_vs_clean: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConditionReport {
    pub condition: String,
    pub far_range: [f64; 2],
    pub models: Vec<ModelScore>,
}

pub fn cmd_eval(x: &Experiment, condition: &str, far_range: Option<[f64; 2]>) -> Result<ConditionReport> {
    let range = far_range.unwrap_or(x.config.evaluation.far_range);
    check_far_range(range)?;
    let (labels, labels_path) = condition_manifest(x, condition)?;
    let mut inputs = vec![labels_path];
    let mut curves = Vec::new();
    for name in x.config.model_names() {
        let p = x.require(x.detections_path(&name, condition), &format!("decode {name} {condition}"))?;
        let lines: Vec<DetectionLine> = manifest::read_jsonl(&p)?;
        curves.push((name, curve_from_detections(&labels.entries, &lines)?));
        inputs.push(p);
    }
    let mut models = Vec::new();
    let baseline = auc(&curves[0].1, range[0], range[1])?;
    for (name, curve) in &curves {
        let a = auc(curve, range[0], range[1])?;
        models.push(ModelScore {
            model: name.clone(),
            auc: a,
            reduction_vs_clean: relative_reduction(baseline, a).ok(),
        });
    }
    let dir = x.eval_dir(condition);
    mkdir(&dir)?;
    let (csv, svg) = emit_plot_data(&curves, dir.join("det"))?;
    let report = ConditionReport {
        condition: condition.to_string(),
        far_range: range,
        models,
    };
    let auc_path = dir.join("auc.json");
    fs::write(&auc_path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&auc_path, e))?;
    x.record(format!("eval {condition}"), &inputs, &[csv, svg, auc_path], serde_json::Value::Null, &dir.join("run.json"))?;
    Ok(report)
}

/// Table with one row per model and AUC / % reduction columns per condition.
pub fn summary_tables(reports: &[ConditionReport]) -> (String, String) {
    let models: Vec<&str> = reports
        .first()
        .map(|r| r.models.iter().map(|m| m.model.as_str()).collect())
        .unwrap_or_default();
    let fmt_red = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.1}"));
    let mut csv = String::from("model");
    let mut header = vec!["Model".to_string()];
    for r in reports {
        let _ = write!(csv, ",{0}_auc,{0}_reduction_pct", r.condition);
        header.push(format!("{} AUC", r.condition));
        header.push(format!("{} % Reduction", r.condition));
    }
    csv.push('\n');
    let mut rows = vec![header];
    for (i, m) in models.iter().enumerate() {
        let mut row = vec![m.to_string()];
        csv.push_str(m);
        for r in reports {
            let s = &r.models[i];
            let _ = write!(csv, ",{:.6},{}", s.auc, s.reduction_vs_clean.map_or(String::new(), |v| format!("{v:.3}")));
            row.push(format!("{:.4}", s.auc));
            row.push(fmt_red(s.reduction_vs_clean));
        }
        csv.push('\n');
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    if let Some(r) = reports.first() {
        let _ = writeln!(text, "AUC over FAR [{}, {}]", r.far_range[0], r.far_range[1]);
    }
    for (k, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        let line = cells.join("  ");
        let _ = writeln!(text, "{}", line.trim_end());
        if k == 0 {
            let _ = writeln!(text, "{}", "-".repeat(line.trim_end().len()));
        }
    }
    (text, csv)
}

#[derive(Debug, Clone)]
pub struct ReproduceOutput {
    pub reports: Vec<ConditionReport>,
    pub summary_text: String,
    pub summary_csv: String,
}

/// Every stage in order, then the summary table.
pub fn cmd_reproduce(x: &Experiment) -> Result<ReproduceOutput> {
    let c = &x.config;
    cmd_gen_corpus(x)?;
    for a in &c.augmentation {
        cmd_augment(x, &a.name)?;
    }
    for t in c.test_condition.iter().filter(|t| t.kind.is_some()) {
        cmd_augment(x, &t.name)?;
    }
    let mut train_reports = Vec::new();
    for name in c.model_names() {
        train_reports.push(cmd_train(x, &name)?.1);
    }
    for name in c.model_names() {
        for t in &c.test_condition {
            cmd_decode(x, &name, &t.name)?;
        }
    }
    let reports = c
        .test_condition
        .iter()
        .map(|t| cmd_eval(x, &t.name, None))
        .collect::<Result<Vec<_>>>()?;
    let (summary_text, summary_csv) = summary_tables(&reports);
    let txt = x.out.join("summary.txt");
    let csv = x.out.join("summary.csv");
    fs::write(&txt, &summary_text).map_err(|e| Error::io(&txt, e))?;
    fs::write(&csv, &summary_csv).map_err(|e| Error::io(&csv, e))?;
    let inputs: Vec<PathBuf> = c.test_condition.iter().map(|t| x.eval_dir(&t.name).join("auc.json")).collect();
    x.record("reproduce".into(), &inputs, &[txt, csv], serde_json::to_value(&train_reports)?, &x.out.join("run.json"))?;
    Ok(ReproduceOutput {
        reports,
        summary_text,
        summary_csv,
    })
}

/// Convenience: the AUC of `model` under `condition` in a finished report set.
pub fn auc_of(reports: &[ConditionReport], condition: &str, model: &str) -> Option<f64> {
    reports
        .iter()
        .find(|r| r.condition == condition)?
        .models
        .iter()
        .find(|m| m.model == model)
        .map(|m| m.auc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_file_matches_defaults() {
        let text = include_str!("../../../configs/default.toml");
        let parsed = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(parsed, ExperimentConfig::default().with_seed(parsed.seed));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        c.augmentation[1].name = c.augmentation[0].name.clone();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.evaluation.far_range = [0.5, 0.01];
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("seed = \"x\"").is_err());
        let c = ExperimentConfig::from_toml("seed = 9").unwrap();
        assert_eq!(c.corpus.seed, derive_seed(9, "corpus"));
        assert_eq!(c.model_config().unwrap().keyword_states, 8);
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let x = Experiment::new(ExperimentConfig::default(), dir.path(), Execution::Sequential).unwrap();
        match cmd_train(&x, "music-0-40") {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "augment music-0-40"),
            other => panic!("{:?}", other.map(|_| ())),
        }
        match cmd_augment(&x, "music-0-40") {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "gen-corpus"),
            other => panic!("{:?}", other.map(|_| ())),
        }
        assert!(matches!(cmd_eval(&x, CLEAN, Some([0.5, 0.1])), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn summary_layout() {
        let r = ConditionReport {
            condition: "playback".into(),
            far_range: [0.01, 0.5],
            models: vec![
                ModelScore { model: "clean".into(), auc: 0.17, reduction_vs_clean: Some(0.0) },
                ModelScore { model: "music-0-40".into(), auc: 0.089, reduction_vs_clean: Some(47.647) },
            ],
        };
        let (text, csv) = summary_tables(&[r]);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), "model,playback_auc,playback_reduction_pct");
        assert!(text.contains("music-0-40"));
        assert!(text.contains("47.6"));
    }

    #[test]
    fn curve_without_detections_misses_everything() {
        let e = |id: &str, label| ManifestEntry {
            id: id.into(),
            wav: String::new(),
            label,
            phones: vec![],
            split: None,
            segments: vec![],
            target_sir_db: None,
            interference_id: None,
            rir_label: None,
            alpha: None,
            crop_offset: None,
        };
        use crate::manifest::Label;
        let labels = vec![e("a", Label::Keyword), e("b", Label::NonKeyword)];
        let c = curve_from_detections(&labels, &[]).unwrap();
        assert!(c.points.iter().all(|p| p.frr == 1.0));
        let hit = DetectionLine {
            id: "a".into(),
            detection: Detection { start_frame: 0, end_frame: 3, score: 1.0, entry_penalty: 0.0, threshold: None },
        };
        let c = curve_from_detections(&labels, &[hit]).unwrap();
        assert!(c.points.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        assert_eq!(auc(&c, 0.01, 0.5).unwrap(), 0.0);
    }
}
