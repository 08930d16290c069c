//! Keyword/filler HMM decoding.
//!
//! The decoding graph has two looping background states (speech and
//! non-speech) and a left-to-right keyword chain. Viterbi runs over scaled
//! likelihoods (log posterior minus log prior); a detection is emitted for
//! every pass through the chain that reaches its final state.
//!
//! Both Viterbi and forced alignment compute best-score-to-go backwards and
//! then trace forwards, which makes the tie-break exact: among equally
//! scoring paths the lexicographically smallest state sequence wins.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{lower_envelope, OperatingPoint};
use crate::exec::{self, Execution};
use crate::model::{PosteriorMatrix, LOG_PROB_FLOOR};

pub const BG_SPEECH: usize = 0;
pub const BG_NONSPEECH: usize = 1;
pub const FIRST_KEYWORD_STATE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmTopology {
    pub states_per_phone: usize,
    pub self_loop_logp: f64,
    pub forward_logp: f64,
}

impl HmmTopology {
    /// Topology from a self-loop probability.
    pub fn new(states_per_phone: usize, self_loop_prob: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&self_loop_prob) || self_loop_prob == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "self-loop probability must lie in (0, 1), got {self_loop_prob}"
            )));
        }
        let t = Self {
            states_per_phone,
            self_loop_logp: self_loop_prob.ln(),
            forward_logp: (1.0 - self_loop_prob).ln(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 3, 5].contains(&self.states_per_phone) {
            return Err(Error::InvalidArgument(format!(
                "states_per_phone must be 1, 3 or 5, got {}",
                self.states_per_phone
            )));
        }
        let mass = self.self_loop_logp.exp() + self.forward_logp.exp();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "self-loop and forward probabilities sum to {mass}"
            )));
        }
        Ok(())
    }
}

impl Default for HmmTopology {
    fn default() -> Self {
        Self::new(1, 0.5).unwrap()
    }
}

/// Background loop probabilities; each row sums to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundLoop {
    pub self_loop: f64,
    pub switch: f64,
    pub keyword_entry: f64,
}

impl Default for BackgroundLoop {
    fn default() -> Self {
        Self {
            self_loop: 0.9,
            switch: 0.05,
            keyword_entry: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateKind {
    BackgroundSpeech,
    BackgroundNonSpeech,
    KeywordPhone { phone: usize, position: usize, substate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub logp: f64,
    /// Carries the keyword entry penalty on top of `logp`.
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodingGraph {
    pub states: Vec<StateKind>,
    pub transitions: Vec<Transition>,
    /// Start states with their initial log-probabilities.
    pub start: Vec<(usize, f64)>,
    pub keyword_final: usize,
    /// Additive log cost subtracted on every entry into the keyword chain.
    pub entry_penalty: f64,
    /// outgoing[s]: (target, arc weight including penalty), sorted by target.
    outgoing: Vec<Vec<(usize, f64)>>,
}

/// Build the keyword/filler graph.
///
/// States 0 and 1 are background speech and non-speech; the keyword chain
/// follows as `phones.len() * states_per_phone` left-to-right states.
pub fn build_kws_graph(
    keyword_phones: &[String],
    inventory: &[String],
    topology: &HmmTopology,
    background: &BackgroundLoop,
    entry_penalty: f64,
) -> Result<DecodingGraph> {
    topology.validate()?;
    if keyword_phones.is_empty() {
        return Err(Error::Empty("keyword phone list"));
    }
    let bg_mass = background.self_loop + background.switch + background.keyword_entry;
    if (bg_mass - 1.0).abs() > 1e-9 || [background.self_loop, background.switch, background.keyword_entry]
        .iter()
        .any(|&p| p <= 0.0)
    {
        return Err(Error::InvalidArgument(format!(
            "background loop probabilities must be positive and sum to 1, got {bg_mass}"
        )));
    }
    if !entry_penalty.is_finite() {
        return Err(Error::InvalidArgument("entry penalty must be finite".into()));
    }
    let mut states = vec![StateKind::BackgroundSpeech, StateKind::BackgroundNonSpeech];
    for (position, symbol) in keyword_phones.iter().enumerate() {
        let phone = inventory
            .iter()
            .position(|p| p == symbol)
            .ok_or_else(|| Error::UnknownPhone(symbol.clone()))?;
        for substate in 0..topology.states_per_phone {
            states.push(StateKind::KeywordPhone {
                phone,
                position,
                substate,
            });
        }
    }
    let keyword_final = states.len() - 1;
    let mut transitions = Vec::new();
    let arc = |from, to, p: f64, penalized| Transition {
        from,
        to,
        logp: p.ln(),
        penalized,
    };
    for (bg, other) in [(BG_SPEECH, BG_NONSPEECH), (BG_NONSPEECH, BG_SPEECH)] {
        transitions.push(arc(bg, bg, background.self_loop, false));
        transitions.push(arc(bg, other, background.switch, false));
        transitions.push(arc(bg, FIRST_KEYWORD_STATE, background.keyword_entry, true));
    }
    for s in FIRST_KEYWORD_STATE..keyword_final {
        transitions.push(Transition {
            from: s,
            to: s,
            logp: topology.self_loop_logp,
            penalized: false,
        });
        transitions.push(Transition {
            from: s,
            to: s + 1,
            logp: topology.forward_logp,
            penalized: false,
        });
    }
    transitions.push(Transition {
        from: keyword_final,
        to: keyword_final,
        logp: topology.self_loop_logp,
        penalized: false,
    });
    for bg in [BG_SPEECH, BG_NONSPEECH] {
        transitions.push(Transition {
            from: keyword_final,
            to: bg,
            logp: topology.forward_logp - std::f64::consts::LN_2,
            penalized: false,
        });
    }
    let third = (1.0f64 / 3.0).ln();
    let start = vec![(BG_SPEECH, third), (BG_NONSPEECH, third), (FIRST_KEYWORD_STATE, third)];
    let mut graph = DecodingGraph {
        states,
        transitions,
        start,
        keyword_final,
        entry_penalty,
        outgoing: Vec::new(),
    };
    graph.index();
    Ok(graph)
}

impl DecodingGraph {
    fn index(&mut self) {
        let mut outgoing = vec![Vec::new(); self.states.len()];
        for t in &self.transitions {
            let w = if t.penalized { t.logp - self.entry_penalty } else { t.logp };
            outgoing[t.from].push((t.to, w));
        }
        for o in &mut outgoing {
            o.sort_by_key(|&(to, _)| to);
        }
        self.outgoing = outgoing;
    }

    pub fn with_entry_penalty(&self, entry_penalty: f64) -> Self {
        let mut g = self.clone();
        g.entry_penalty = entry_penalty;
        g.index();
        g
    }

    /// Apply `f` to every transition and start log-probability and to the penalty.
    pub fn map_log_weights(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut g = self.clone();
        for t in &mut g.transitions {
            t.logp = f(t.logp);
        }
        for s in &mut g.start {
            s.1 = f(s.1);
        }
        g.entry_penalty = f(g.entry_penalty);
        g.index();
        g
    }

    /// Initial log weight of `state`, penalty included; `-inf` for non-start states.
    pub fn start_log_weight(&self, state: usize) -> f64 {
        self.start_weight(state)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn is_keyword(&self, state: usize) -> bool {
        state >= FIRST_KEYWORD_STATE
    }

    /// Paths may end in a background state or the keyword final state.
    pub fn is_end_state(&self, state: usize) -> bool {
        state < FIRST_KEYWORD_STATE || state == self.keyword_final
    }

    fn start_weight(&self, state: usize) -> f64 {
        self.start
            .iter()
            .find(|&&(s, _)| s == state)
            .map(|&(s, lp)| if self.is_keyword(s) { lp - self.entry_penalty } else { lp })
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Outgoing probability mass of `state`, ignoring penalties.
    pub fn outgoing_mass(&self, state: usize) -> f64 {
        self.transitions
            .iter()
            .filter(|t| t.from == state)
            .map(|t| t.logp.exp())
            .sum()
    }
}

impl fmt::Display for DecodingGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# keyword entry penalty {}", self.entry_penalty)?;
        for (id, kind) in self.states.iter().enumerate() {
            let tag = match kind {
                StateKind::BackgroundSpeech => "bg-speech".to_string(),
                StateKind::BackgroundNonSpeech => "bg-nonspeech".to_string(),
                StateKind::KeywordPhone { phone, position, substate } => {
                    format!("kw pos={position} phone={phone} sub={substate}")
                }
            };
            let mut flags = String::new();
            if self.start.iter().any(|&(s, _)| s == id) {
                flags.push_str(" start");
            }
            if id == self.keyword_final {
                flags.push_str(" final");
            }
            writeln!(f, "state {id} [{tag}]{flags}")?;
            for t in self.transitions.iter().filter(|t| t.from == id) {
                let pen = if t.penalized { " +penalty" } else { "" };
                writeln!(f, "  -> {} logp={:.6}{pen}", t.to, t.logp)?;
            }
        }
        Ok(())
    }
}

/// A hypothesized keyword occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start_frame: usize,
    pub end_frame: usize,
    /// Mean per-frame log-likelihood ratio of the keyword path against the background.
    pub score: f64,
    pub entry_penalty: f64,
    /// Detection threshold applied, if any.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub path: Vec<usize>,
    pub log_score: f64,
    pub detections: Vec<Detection>,
}

/// `max(ln p, floor) - ln prior`, frames × states.
pub fn scaled_log_likelihoods(posteriors: &PosteriorMatrix, priors: &[f64]) -> Result<Vec<Vec<f64>>> {
    if priors.len() != posteriors.classes() {
        return Err(Error::DimensionMismatch {
            expected: posteriors.classes(),
            actual: priors.len(),
        });
    }
    Ok(posteriors
        .0
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(priors)
                .map(|(&p, &q)| log_floor(p) - q.ln())
                .collect()
        })
        .collect())
}

fn log_floor(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_PROB_FLOOR)
    } else {
        LOG_PROB_FLOOR
    }
}

/// Best-scoring path through `graph` and the keyword detections along it.
pub fn viterbi(graph: &DecodingGraph, posteriors: &PosteriorMatrix, priors: &[f64]) -> Result<DecodeResult> {
    if posteriors.classes() != graph.num_states() {
        return Err(Error::DimensionMismatch {
            expected: graph.num_states(),
            actual: posteriors.classes(),
        });
    }
    viterbi_log_likelihoods(graph, &scaled_log_likelihoods(posteriors, priors)?)
}

/// [`viterbi`] over precomputed per-frame, per-state emission log-scores.
pub fn viterbi_log_likelihoods(graph: &DecodingGraph, emissions: &[Vec<f64>]) -> Result<DecodeResult> {
    if let Some(row) = emissions.iter().find(|r| r.len() != graph.num_states()) {
        return Err(Error::DimensionMismatch {
            expected: graph.num_states(),
            actual: row.len(),
        });
    }
    let Some((path, log_score)) = best_path(graph, emissions) else {
        return Ok(DecodeResult {
            path: Vec::new(),
            log_score: f64::NEG_INFINITY,
            detections: Vec::new(),
        });
    };
    let detections = keyword_segments(graph, &path)
        .into_iter()
        .map(|(start, end)| Detection {
            start_frame: start,
            end_frame: end,
            score: segment_score(graph, &path[start..=end], &emissions[start..=end]),
            entry_penalty: graph.entry_penalty,
            threshold: None,
        })
        .collect();
    Ok(DecodeResult {
        path,
        log_score,
        detections,
    })
}

/// Backward pass plus lexicographically smallest forward trace.
fn best_path(graph: &DecodingGraph, emissions: &[Vec<f64>]) -> Option<(Vec<usize>, f64)> {
    let frames = emissions.len();
    let n = graph.num_states();
    if frames == 0 {
        return None;
    }
    let mut to_go = vec![vec![f64::NEG_INFINITY; n]; frames];
    for s in 0..n {
        if graph.is_end_state(s) {
            to_go[frames - 1][s] = emissions[frames - 1][s];
        }
    }
    for t in (0..frames - 1).rev() {
        for s in 0..n {
            let best = graph.outgoing[s]
                .iter()
                .map(|&(to, w)| w + to_go[t + 1][to])
                .fold(f64::NEG_INFINITY, f64::max);
            to_go[t][s] = emissions[t][s] + best;
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (s, &g) in to_go[0].iter().enumerate() {
        let v = graph.start_weight(s) + g;
        if v > f64::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
            best = Some((s, v));
        }
    }
    let (mut state, total) = best?;
    let mut path = Vec::with_capacity(frames);
    path.push(state);
    for t in 0..frames - 1 {
        let mut next: Option<(usize, f64)> = None;
        for &(to, w) in &graph.outgoing[state] {
            let v = w + to_go[t + 1][to];
            if v > f64::NEG_INFINITY && next.is_none_or(|(_, b)| v > b) {
                next = Some((to, v));
            }
        }
        state = next?.0;
        path.push(state);
    }
    Some((path, total))
}

/// Inclusive frame spans where the path passes through the whole keyword chain.
fn keyword_segments(graph: &DecodingGraph, path: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < path.len() {
        if graph.is_keyword(path[t]) {
            let start = t;
            while t + 1 < path.len() && graph.is_keyword(path[t + 1]) && path[t + 1] >= path[t] {
                t += 1;
            }
            if path[start] == FIRST_KEYWORD_STATE && path[t] == graph.keyword_final {
                out.push((start, t));
            }
        }
        t += 1;
    }
    out
}

fn segment_score(graph: &DecodingGraph, states: &[usize], emissions: &[Vec<f64>]) -> f64 {
    let total: f64 = states
        .iter()
        .zip(emissions)
        .map(|(&s, e)| e[s] - e[BG_SPEECH].max(e[BG_NONSPEECH]))
        .sum();
    debug_assert!(states.iter().all(|&s| graph.is_keyword(s)));
    total / states.len() as f64
}

/// Per-frame log-likelihood ratio of a keyword-chain path segment.
///
/// The background reference is the best background-only path over the same
/// frames; with both background states mutually reachable and scored on
/// emissions alone, that is the per-frame maximum of the two.
pub fn detection_score(
    graph: &DecodingGraph,
    segment_states: &[usize],
    posteriors: &PosteriorMatrix,
    start_frame: usize,
    priors: &[f64],
) -> Result<f64> {
    if segment_states.is_empty() {
        return Err(Error::Empty("path segment"));
    }
    if start_frame + segment_states.len() > posteriors.frames() {
        return Err(Error::LengthMismatch {
            left: start_frame + segment_states.len(),
            right: posteriors.frames(),
        });
    }
    if let Some(&s) = segment_states.iter().find(|&&s| !graph.is_keyword(s)) {
        return Err(Error::InvalidArgument(format!("state {s} is not on the keyword chain")));
    }
    let emissions = scaled_log_likelihoods(posteriors, priors)?;
    Ok(segment_score(
        graph,
        segment_states,
        &emissions[start_frame..start_frame + segment_states.len()],
    ))
}

/// Best detection score of an utterance, if any detection fired.
pub fn best_score(detections: &[Detection]) -> Option<f64> {
    detections.iter().map(|d| d.score).reduce(f64::max)
}

/// One position of a forced chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainUnit {
    /// Keyword-head state id.
    pub state: usize,
    /// Auxiliary phone id.
    pub phone: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// Chain position per frame.
    pub positions: Vec<usize>,
    pub states: Vec<usize>,
    pub phones: Vec<usize>,
}

/// Viterbi restricted to the given left-to-right chain.
///
/// Emissions are floored log posteriors of the keyword head, plus those of
/// the auxiliary head when given. Every chain position is visited at least
/// once, in order; ties favour staying in the current position.
pub fn forced_align(
    chain: &[ChainUnit],
    kw_posteriors: &PosteriorMatrix,
    aux_posteriors: Option<&PosteriorMatrix>,
    topology: &HmmTopology,
) -> Result<Alignment> {
    let frames = kw_posteriors.frames();
    if chain.is_empty() {
        return Err(Error::Empty("forced chain"));
    }
    if frames < chain.len() {
        return Err(Error::InfeasibleAlignment {
            frames,
            states: chain.len(),
        });
    }
    if let Some(aux) = aux_posteriors {
        if aux.frames() != frames {
            return Err(Error::LengthMismatch {
                left: frames,
                right: aux.frames(),
            });
        }
    }
    for u in chain {
        if u.state >= kw_posteriors.classes() {
            return Err(Error::TargetOutOfRange {
                index: u.state,
                classes: kw_posteriors.classes(),
            });
        }
        if let Some(aux) = aux_posteriors {
            if u.phone >= aux.classes() {
                return Err(Error::TargetOutOfRange {
                    index: u.phone,
                    classes: aux.classes(),
                });
            }
        }
    }
    let emit = |t: usize, j: usize| {
        let u = chain[j];
        let mut e = log_floor(kw_posteriors.0[[t, u.state]]);
        if let Some(aux) = aux_posteriors {
            e += log_floor(aux.0[[t, u.phone]]);
        }
        e
    };
    let positions = align_positions(frames, chain.len(), emit, topology);
    Ok(Alignment {
        states: positions.iter().map(|&j| chain[j].state).collect(),
        phones: positions.iter().map(|&j| chain[j].phone).collect(),
        positions,
    })
}

/// Forced alignment over precomputed emission log-scores, frames × chain
/// positions; returns the chain position of every frame.
pub fn forced_align_log_likelihoods(emissions: &[Vec<f64>], topology: &HmmTopology) -> Result<Vec<usize>> {
    let frames = emissions.len();
    let units = emissions.first().map_or(0, Vec::len);
    if units == 0 {
        return Err(Error::Empty("forced chain"));
    }
    if let Some(row) = emissions.iter().find(|r| r.len() != units) {
        return Err(Error::DimensionMismatch {
            expected: units,
            actual: row.len(),
        });
    }
    if frames < units {
        return Err(Error::InfeasibleAlignment { frames, states: units });
    }
    Ok(align_positions(frames, units, |t, j| emissions[t][j], topology))
}

fn align_positions(frames: usize, units: usize, emit: impl Fn(usize, usize) -> f64, topology: &HmmTopology) -> Vec<usize> {
    let step = |to_go: &[f64], j: usize| {
        let stay = topology.self_loop_logp + to_go[j];
        let advance = if j + 1 < units {
            topology.forward_logp + to_go[j + 1]
        } else {
            f64::NEG_INFINITY
        };
        (stay, advance)
    };
    // to_go[t][j]: best score of frames t.. given position j at t, ending at the last position.
    let mut to_go = vec![vec![f64::NEG_INFINITY; units]; frames];
    to_go[frames - 1][units - 1] = emit(frames - 1, units - 1);
    for t in (0..frames - 1).rev() {
        for j in 0..units {
            let (stay, advance) = step(&to_go[t + 1], j);
            to_go[t][j] = emit(t, j) + stay.max(advance);
        }
    }
    let mut positions = Vec::with_capacity(frames);
    let mut j = 0;
    positions.push(j);
    for t in 0..frames - 1 {
        let (stay, advance) = step(&to_go[t + 1], j);
        if advance > stay {
            j += 1;
        }
        positions.push(j);
    }
    positions
}

/// Posteriors of one dev/test utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct Trial {
    pub id: String,
    pub posteriors: PosteriorMatrix,
    pub is_keyword: bool,
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    pub points: Vec<OperatingPoint>,
    pub envelope: Vec<OperatingPoint>,
}

/// Best detection score per trial under one entry penalty.
pub fn decode_best_scores(
    graph: &DecodingGraph,
    trials: &[Trial],
    priors: &[f64],
    exec: Execution,
) -> Result<Vec<Option<f64>>> {
    exec::map(exec, trials, |t| {
        viterbi(graph, &t.posteriors, priors).map(|r| best_score(&r.detections))
    })
    .into_iter()
    .collect()
}

/// (FAR, FRR) at one threshold: a trial is accepted when it has a detection
/// scoring at least `threshold`.
pub fn rates_at(scores: &[(Option<f64>, bool)], threshold: f64) -> (f64, f64) {
    let (mut pos, mut neg, mut fr, mut fa) = (0usize, 0usize, 0usize, 0usize);
    for &(score, is_kw) in scores {
        let accepted = score.is_some_and(|s| s >= threshold);
        if is_kw {
            pos += 1;
            if !accepted {
                fr += 1;
            }
        } else {
            neg += 1;
            if accepted {
                fa += 1;
            }
        }
    }
    (fa as f64 / neg.max(1) as f64, fr as f64 / pos.max(1) as f64)
}

/// Decode the dev set under every (entry penalty, threshold) grid point.
pub fn tune_operating_points(
    template: &DecodingGraph,
    penalties: &[f64],
    thresholds: &[f64],
    dev: &[Trial],
    priors: &[f64],
    exec: Execution,
) -> Result<TuningResult> {
    if penalties.is_empty() || thresholds.is_empty() {
        return Err(Error::Empty("tuning grid"));
    }
    if !dev.iter().any(|t| t.is_keyword) || !dev.iter().any(|t| !t.is_keyword) {
        return Err(Error::InvalidArgument(
            "dev set needs both keyword and non-keyword trials".into(),
        ));
    }
    let mut points = Vec::with_capacity(penalties.len() * thresholds.len());
    for &penalty in penalties {
        let graph = template.with_entry_penalty(penalty);
        let best = decode_best_scores(&graph, dev, priors, exec)?;
        let scored: Vec<(Option<f64>, bool)> = best.into_iter().zip(dev.iter().map(|t| t.is_keyword)).collect();
        for &threshold in thresholds {
            let (far, frr) = rates_at(&scored, threshold);
            points.push(OperatingPoint {
                far,
                frr,
                entry_penalty: Some(penalty),
                threshold,
            });
        }
    }
    let envelope = lower_envelope(&points);
    Ok(TuningResult { points, envelope })
}
