//! Multitask feedforward acoustic model.
//!
//! A ReLU trunk feeds two softmax heads: keyword HMM states (primary) and an
//! auxiliary phone classifier. Training minimizes the weighted sum of the two
//! per-head cross-entropies with plain mini-batch SGD.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::seed;

pub const MODEL_VERSION: &str = "kws-model-v1";

/// Floor on log-probabilities inside the loss.
pub const LOG_PROB_FLOOR: f64 = -69.077_552_789_821_37; // ln(1e-30)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    pub keyword_states: usize,
    pub aux_phones: usize,
    #[serde(default = "default_kw_weight")]
    pub loss_weight_keyword: f64,
    #[serde(default = "default_aux_weight")]
    pub loss_weight_aux: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub init_seed: u64,
    /// Halve the learning rate after an epoch that improves the loss by less than 1%.
    #[serde(default = "default_true")]
    pub halve_on_plateau: bool,
}

fn default_hidden_layers() -> usize {
    3
}
fn default_hidden_units() -> usize {
    128
}
fn default_kw_weight() -> f64 {
    0.9
}
fn default_aux_weight() -> f64 {
    0.1
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_batch_size() -> usize {
    256
}
fn default_epochs() -> usize {
    8
}
fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(keyword_states: usize, aux_phones: usize) -> Self {
        Self {
            hidden_layers: default_hidden_layers(),
            hidden_units: default_hidden_units(),
            keyword_states,
            aux_phones,
            loss_weight_keyword: default_kw_weight(),
            loss_weight_aux: default_aux_weight(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            init_seed: 0,
            halve_on_plateau: true,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            keyword: self.loss_weight_keyword,
            aux: self.loss_weight_aux,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (k, a) = (self.loss_weight_keyword, self.loss_weight_aux);
        if k < 0.0 || a < 0.0 || ((k + a) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative and sum to 1, got {k} and {a}"
            )));
        }
        if self.keyword_states == 0 || self.aux_phones == 0 {
            return Err(Error::Config("head sizes must be at least 1".into()));
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub keyword: f64,
    pub aux: f64,
}

/// Affine layer `y = x W + b` with `W` stored `[inputs, outputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// Trunk plus both heads; also the layout of a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub trunk: Vec<Dense>,
    pub keyword_head: Dense,
    pub aux_head: Dense,
}

impl Parameters {
    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain([&self.keyword_head, &self.aux_head])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk
            .iter_mut()
            .chain([&mut self.keyword_head, &mut self.aux_head])
    }

    fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.w.nrows(), d.w.ncols());
        Self {
            trunk: self.trunk.iter().map(z).collect(),
            keyword_head: z(&self.keyword_head),
            aux_head: z(&self.aux_head),
        }
    }

    pub fn count(&self) -> usize {
        self.layers().map(|d| d.w.len() + d.b.len()).sum()
    }

    /// Flattened copy in canonical order (per layer: weights row-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for d in self.layers() {
            out.extend(d.w.iter());
            out.extend(d.b.iter());
        }
        out
    }

    pub fn get(&self, index: usize) -> f64 {
        *self.locate(index)
    }

    pub fn set(&mut self, index: usize, value: f64) {
        *self.locate_mut(index) = value;
    }

    fn locate(&self, mut index: usize) -> &f64 {
        for d in self.layers() {
            if index < d.w.len() {
                return d.w.as_slice().unwrap().get(index).unwrap();
            }
            index -= d.w.len();
            if index < d.b.len() {
                return &d.b[index];
            }
            index -= d.b.len();
        }
        panic!("parameter index out of range")
    }

    fn locate_mut(&mut self, mut index: usize) -> &mut f64 {
        for d in self.layers_mut() {
            if index < d.w.len() {
                return d.w.as_slice_mut().unwrap().get_mut(index).unwrap();
            }
            index -= d.w.len();
            if index < d.b.len() {
                return &mut d.b[index];
            }
            index -= d.b.len();
        }
        panic!("parameter index out of range")
    }

    /// Index range of the auxiliary head's parameters in flat order.
    pub fn aux_head_range(&self) -> std::ops::Range<usize> {
        let n = self.count();
        n - self.aux_head.w.len() - self.aux_head.b.len()..n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub params: Parameters,
    /// Keyword-state priors for the scaled-likelihood conversion; empty until estimated.
    pub state_priors: Vec<f64>,
}

/// Frames × classes matrix of per-frame probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix(pub Array2<f64>);

impl PosteriorMatrix {
    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }
}

pub fn init_model(config: &ModelConfig, feature_dim: usize) -> Result<AcousticModel> {
    config.validate()?;
    if feature_dim == 0 {
        return Err(Error::Config("feature dimension must be at least 1".into()));
    }
    let mut rng = seed::rng_from(config.init_seed);
    let mut layer = |inputs: usize, outputs: usize| {
        let bound = 1.0 / (inputs as f64).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-bound..=bound)),
            b: Array1::zeros(outputs),
        }
    };
    let mut trunk = Vec::with_capacity(config.hidden_layers);
    let mut width = feature_dim;
    for _ in 0..config.hidden_layers {
        trunk.push(layer(width, config.hidden_units));
        width = config.hidden_units;
    }
    let keyword_head = layer(width, config.keyword_states);
    let aux_head = layer(width, config.aux_phones);
    Ok(AcousticModel {
        config: config.clone(),
        feature_dim,
        params: Parameters {
            trunk,
            keyword_head,
            aux_head,
        },
        state_priors: Vec::new(),
    })
}

fn relu(x: &mut Array2<f64>) {
    // NaN passes through so a diverged model is reported, not masked
    x.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
}

/// Row-wise log-softmax with max subtraction.
fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

struct Activations {
    /// Inputs to every layer of the trunk, plus the trunk output last.
    inputs: Vec<Array2<f64>>,
    kw_logp: Array2<f64>,
    aux_logp: Array2<f64>,
}

impl AcousticModel {
    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn activations(&self, x: ArrayView2<f64>) -> Activations {
        let mut inputs = Vec::with_capacity(self.params.trunk.len() + 1);
        let mut h = x.to_owned();
        for layer in &self.params.trunk {
            let mut z = layer.forward(h.view());
            relu(&mut z);
            inputs.push(std::mem::replace(&mut h, z));
        }
        let kw_logp = log_softmax(&self.params.keyword_head.forward(h.view()));
        let aux_logp = log_softmax(&self.params.aux_head.forward(h.view()));
        inputs.push(h);
        Activations {
            inputs,
            kw_logp,
            aux_logp,
        }
    }

    /// Per-frame posteriors from both heads.
    pub fn forward(&self, features: &FeatureMatrix) -> Result<(PosteriorMatrix, PosteriorMatrix)> {
        self.forward_view(features.data.view())
    }

    pub fn forward_view(&self, x: ArrayView2<f64>) -> Result<(PosteriorMatrix, PosteriorMatrix)> {
        if x.ncols() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: x.ncols(),
            });
        }
        let a = self.activations(x);
        Ok((
            PosteriorMatrix(a.kw_logp.mapv(f64::exp)),
            PosteriorMatrix(a.aux_logp.mapv(f64::exp)),
        ))
    }

    /// Loss and its gradient on one batch.
    pub fn loss_and_gradient(&self, batch: &Batch) -> Result<(f64, Parameters)> {
        batch.check(self)?;
        let weights = self.config.loss_weights();
        let a = self.activations(batch.features.view());
        let loss = weighted_ce_from_log(&a.kw_logp, &a.aux_logp, &batch.kw_targets, &batch.aux_targets, weights)?;

        let n = batch.len() as f64;
        let head_delta = |logp: &Array2<f64>, targets: &[usize], w: f64| {
            let mut d = logp.mapv(f64::exp);
            for (mut row, (&t, lrow)) in d.rows_mut().into_iter().zip(targets.iter().zip(logp.rows())) {
                if lrow[t] < LOG_PROB_FLOOR {
                    row.fill(0.0);
                } else {
                    row[t] -= 1.0;
                    row.mapv_inplace(|v| v * w / n);
                }
            }
            d
        };
        let d_kw = head_delta(&a.kw_logp, &batch.kw_targets, weights.keyword);
        let d_aux = head_delta(&a.aux_logp, &batch.aux_targets, weights.aux);

        let mut grad = self.params.zeros_like();
        let top = a.inputs.last().unwrap();
        grad.keyword_head.w = top.t().dot(&d_kw);
        grad.keyword_head.b = d_kw.sum_axis(Axis(0));
        grad.aux_head.w = top.t().dot(&d_aux);
        grad.aux_head.b = d_aux.sum_axis(Axis(0));

        let mut dh = d_kw.dot(&self.params.keyword_head.w.t()) + d_aux.dot(&self.params.aux_head.w.t());
        for l in (0..self.params.trunk.len()).rev() {
            // ReLU derivative from the layer's own output.
            let out = &a.inputs[l + 1];
            ndarray::Zip::from(&mut dh).and(out).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            });
            let input = &a.inputs[l];
            grad.trunk[l].w = input.t().dot(&dh);
            grad.trunk[l].b = dh.sum_axis(Axis(0));
            if l > 0 {
                dh = dh.dot(&self.params.trunk[l].w.t());
            }
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        batch.check(self)?;
        let a = self.activations(batch.features.view());
        weighted_ce_from_log(
            &a.kw_logp,
            &a.aux_logp,
            &batch.kw_targets,
            &batch.aux_targets,
            self.config.loss_weights(),
        )
    }

    /// Sign pattern of every hidden pre-activation, for kink detection.
    fn relu_pattern(&self, x: ArrayView2<f64>) -> Vec<bool> {
        let mut out = Vec::new();
        let mut h = x.to_owned();
        for layer in &self.params.trunk {
            let z = layer.forward(h.view());
            out.extend(z.iter().map(|&v| v > 0.0));
            h = z.mapv(|v| v.max(0.0));
        }
        out
    }

    fn apply_sgd(&mut self, grad: &Parameters, lr: f64) {
        for (p, g) in self.params.layers_mut().zip(grad.layers()) {
            p.w.scaled_add(-lr, &g.w);
            p.b.scaled_add(-lr, &g.b);
        }
    }
}

/// Frames with aligned targets for both heads.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    pub kw_targets: Vec<usize>,
    pub aux_targets: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.kw_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kw_targets.is_empty()
    }

    fn check(&self, model: &AcousticModel) -> Result<()> {
        if self.features.ncols() != model.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: model.feature_dim,
                actual: self.features.ncols(),
            });
        }
        let n = self.features.nrows();
        for len in [self.kw_targets.len(), self.aux_targets.len()] {
            if len != n {
                return Err(Error::LengthMismatch { left: n, right: len });
            }
        }
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(())
    }
}

fn head_ce(logp: &Array2<f64>, targets: &[usize]) -> Result<f64> {
    if targets.len() != logp.nrows() {
        return Err(Error::LengthMismatch {
            left: logp.nrows(),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::Empty("target sequence"));
    }
    let classes = logp.ncols();
    let mut total = 0.0;
    for (row, &t) in logp.rows().into_iter().zip(targets) {
        if t >= classes {
            return Err(Error::TargetOutOfRange { index: t, classes });
        }
        let lp = row[t];
        // f64::max would swallow NaN
        total -= if lp.is_nan() { lp } else { lp.max(LOG_PROB_FLOOR) };
    }
    Ok(total / targets.len() as f64)
}

fn weighted_ce_from_log(
    kw_logp: &Array2<f64>,
    aux_logp: &Array2<f64>,
    kw_targets: &[usize],
    aux_targets: &[usize],
    weights: LossWeights,
) -> Result<f64> {
    let kw = head_ce(kw_logp, kw_targets)?;
    let aux = head_ce(aux_logp, aux_targets)?;
    Ok(weights.keyword * kw + weights.aux * aux)
}

/// `w_kw * mean(-ln p_kw[target]) + w_aux * mean(-ln p_aux[target])`.
pub fn weighted_ce_loss(
    kw_posteriors: &PosteriorMatrix,
    aux_posteriors: &PosteriorMatrix,
    kw_targets: &[usize],
    aux_targets: &[usize],
    weights: LossWeights,
) -> Result<f64> {
    let ln = |p: &PosteriorMatrix| p.0.mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
    weighted_ce_from_log(&ln(kw_posteriors), &ln(aux_posteriors), kw_targets, aux_targets, weights)
}

/// Frame-aligned training material, stored compactly.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Array2<f32>,
    pub kw_targets: Vec<usize>,
    pub aux_targets: Vec<usize>,
}

impl TrainingSet {
    /// Concatenate utterances; every utterance needs one target per frame on both heads.
    pub fn from_utterances<'a>(
        utterances: impl IntoIterator<Item = (&'a FeatureMatrix, &'a [usize], &'a [usize])>,
    ) -> Result<Self> {
        let mut rows: Vec<f32> = Vec::new();
        let mut kw = Vec::new();
        let mut aux = Vec::new();
        let mut dim = None;
        for (f, k, a) in utterances {
            if k.len() != f.frames() || a.len() != f.frames() {
                return Err(Error::LengthMismatch {
                    left: f.frames(),
                    right: k.len().min(a.len()),
                });
            }
            match dim {
                None => dim = Some(f.dims()),
                Some(d) if d != f.dims() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: f.dims(),
                    })
                }
                _ => {}
            }
            rows.extend(f.data.iter().map(|&v| v as f32));
            kw.extend_from_slice(k);
            aux.extend_from_slice(a);
        }
        let dim = dim.ok_or(Error::Empty("training set"))?;
        let features = Array2::from_shape_vec((kw.len(), dim), rows).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(Self {
            features,
            kw_targets: kw,
            aux_targets: aux,
        })
    }

    pub fn len(&self) -> usize {
        self.kw_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kw_targets.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let dim = self.features.ncols();
        let mut features = Array2::zeros((indices.len(), dim));
        for (mut dst, &i) in features.rows_mut().into_iter().zip(indices) {
            dst.zip_mut_with(&self.features.row(i), |d, &s| *d = s as f64);
        }
        Batch {
            features,
            kw_targets: indices.iter().map(|&i| self.kw_targets[i]).collect(),
            aux_targets: indices.iter().map(|&i| self.aux_targets[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

/// Mini-batch SGD over frames shuffled per epoch by a seeded generator.
pub fn train(mut model: AcousticModel, data: &TrainingSet, shuffle_seed: u64) -> Result<(AcousticModel, Vec<EpochStats>)> {
    model.config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.features.ncols() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            actual: data.features.ncols(),
        });
    }
    let (k, a) = (model.config.keyword_states, model.config.aux_phones);
    if let Some(&t) = data.kw_targets.iter().find(|&&t| t >= k) {
        return Err(Error::TargetOutOfRange { index: t, classes: k });
    }
    if let Some(&t) = data.aux_targets.iter().find(|&&t| t >= a) {
        return Err(Error::TargetOutOfRange { index: t, classes: a });
    }

    let mut rng = seed::rng_from(shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = model.config.learning_rate;
    let mut history: Vec<EpochStats> = Vec::with_capacity(model.config.epochs);
    for epoch in 0..model.config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(model.config.batch_size).enumerate() {
            let batch = data.batch(idx);
            let (loss, grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            total += loss * idx.len() as f64;
            if lr > 0.0 {
                model.apply_sgd(&grad, lr);
            }
        }
        let loss = total / data.len() as f64;
        history.push(EpochStats {
            epoch: epoch + 1,
            loss,
            learning_rate: lr,
        });
        if model.config.halve_on_plateau && history.len() >= 2 {
            let prev = history[history.len() - 2].loss;
            if loss > prev * 0.99 {
                lr *= 0.5;
            }
        }
    }
    Ok((model, history))
}

/// Fraction of frames whose argmax matches the target.
pub fn frame_accuracy(posteriors: &PosteriorMatrix, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = posteriors
        .argmax()
        .iter()
        .zip(targets)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / targets.len() as f64
}

/// Class frequencies with add-one smoothing.
pub fn estimate_priors(targets: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![1.0; classes];
    for &t in targets {
        if t < classes {
            counts[t] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    /// Flat indices of the parameters that were compared.
    pub checked: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Parameters skipped because the difference stencil crossed a ReLU kink.
    pub skipped_kinks: usize,
}

pub const FD_STEP: f64 = 1e-5;

/// Compare backprop with central differences on random parameters.
pub fn gradient_check(model: &AcousticModel, batch: &Batch, samples: usize, seed: u64) -> Result<GradientCheckReport> {
    gradient_check_with(model, batch, samples, seed, |_| {})
}

/// As [`gradient_check`], letting the caller tamper with the analytic
/// gradient first.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`. Parameters whose
/// `±h` perturbation flips any ReLU are not differentiable there and are
/// skipped.
pub fn gradient_check_with(
    model: &AcousticModel,
    batch: &Batch,
    samples: usize,
    seed: u64,
    mutate: impl FnOnce(&mut Parameters),
) -> Result<GradientCheckReport> {
    let (_, mut grad) = model.loss_and_gradient(batch)?;
    mutate(&mut grad);
    let n = model.parameter_count();
    let mut rng = seed::rng_from(seed);
    let mut candidates: Vec<usize> = (0..n).collect();
    candidates.shuffle(&mut rng);
    candidates.truncate(samples.min(n));
    candidates.sort_unstable();

    let base_pattern = model.relu_pattern(batch.features.view());
    let mut probe = model.clone();
    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        checked: Vec::new(),
        analytic: Vec::new(),
        numeric: Vec::new(),
        skipped_kinks: 0,
    };
    for &i in &candidates {
        let orig = probe.params.get(i);
        probe.params.set(i, orig + FD_STEP);
        let plus = probe.loss(batch)?;
        let plus_pattern = probe.relu_pattern(batch.features.view());
        probe.params.set(i, orig - FD_STEP);
        let minus = probe.loss(batch)?;
        let minus_pattern = probe.relu_pattern(batch.features.view());
        probe.params.set(i, orig);
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grad.get(i);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked.push(i);
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct LayerBlob {
    name: String,
    rows: usize,
    cols: usize,
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    config: ModelConfig,
    feature_dim: usize,
    layers: Vec<LayerBlob>,
    #[serde(default)]
    state_priors: Vec<f64>,
}

fn encode_f32(values: impl Iterator<Item = f64>) -> String {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f32(s: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64.decode(s).map_err(|e| Error::Serde(e.to_string()))?;
    if bytes.len() != 4 * expected {
        return Err(Error::Serde(format!(
            "parameter blob holds {} bytes, expected {}",
            bytes.len(),
            4 * expected
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

impl AcousticModel {
    pub fn to_json(&self) -> Result<String> {
        let mut layers = Vec::new();
        let named = self
            .params
            .trunk
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("hidden{i}"), d))
            .chain([
                ("keyword_head".to_string(), &self.params.keyword_head),
                ("aux_head".to_string(), &self.params.aux_head),
            ]);
        for (name, d) in named {
            layers.push(LayerBlob {
                name,
                rows: d.w.nrows(),
                cols: d.w.ncols(),
                weights: encode_f32(d.w.iter().copied()),
                bias: encode_f32(d.b.iter().copied()),
            });
        }
        let file = ModelFile {
            version: MODEL_VERSION.into(),
            config: self.config.clone(),
            feature_dim: self.feature_dim,
            layers,
            state_priors: self.state_priors.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(Error::Serde(format!("unsupported model version {:?}", file.version)));
        }
        let mut template = init_model(&file.config, file.feature_dim)?;
        let expected = template.params.trunk.len() + 2;
        if file.layers.len() != expected {
            return Err(Error::Serde(format!("expected {expected} layers, found {}", file.layers.len())));
        }
        for (blob, d) in file.layers.iter().zip(template.params.layers_mut()) {
            if (blob.rows, blob.cols) != d.w.dim() {
                return Err(Error::Serde(format!(
                    "layer {} has shape {}x{}, expected {:?}",
                    blob.name,
                    blob.rows,
                    blob.cols,
                    d.w.dim()
                )));
            }
            let w = decode_f32(&blob.weights, blob.rows * blob.cols)?;
            d.w = Array2::from_shape_vec((blob.rows, blob.cols), w).map_err(|e| Error::Serde(e.to_string()))?;
            d.b = Array1::from(decode_f32(&blob.bias, blob.cols)?);
        }
        template.state_priors = file.state_priors;
        Ok(template)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
