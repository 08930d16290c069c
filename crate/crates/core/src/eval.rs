//! DET curves, range-restricted AUC and plot data.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub far: f64,
    pub frr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry_penalty: Option<f64>,
    pub threshold: f64,
}

/// Best detection score per utterance, split by ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub positives: Vec<(String, Option<f64>)>,
    pub negatives: Vec<(String, Option<f64>)>,
}

impl TrialSet {
    pub fn new(positives: Vec<(String, Option<f64>)>, negatives: Vec<(String, Option<f64>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, score) in positives.iter().chain(&negatives) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("trial id {id} appears twice")));
            }
            if score.is_some_and(|s| s.is_nan()) {
                return Err(Error::InvalidArgument(format!("trial {id} has a NaN score")));
            }
        }
        Ok(Self { positives, negatives })
    }

    pub fn rates(&self, threshold: f64) -> (f64, f64) {
        let hit = |s: &Option<f64>| s.is_some_and(|s| s >= threshold);
        let fa = self.negatives.iter().filter(|(_, s)| hit(s)).count();
        let fr = self.positives.iter().filter(|(_, s)| !hit(s)).count();
        (
            fa as f64 / self.negatives.len() as f64,
            fr as f64 / self.positives.len() as f64,
        )
    }
}

/// Operating points ordered by increasing FAR with decreasing FRR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetCurve {
    pub points: Vec<OperatingPoint>,
}

/// Sweep the threshold over every distinct score plus both infinities.
pub fn det_curve(trials: &TrialSet) -> Result<DetCurve> {
    if trials.positives.is_empty() {
        return Err(Error::Empty("positive trials"));
    }
    if trials.negatives.is_empty() {
        return Err(Error::Empty("negative trials"));
    }
    let mut thresholds: Vec<f64> = trials
        .positives
        .iter()
        .chain(&trials.negatives)
        .filter_map(|(_, s)| *s)
        .collect();
    thresholds.push(f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let points: Vec<OperatingPoint> = thresholds
        .into_iter()
        .map(|threshold| {
            let (far, frr) = trials.rates(threshold);
            OperatingPoint {
                far,
                frr,
                entry_penalty: None,
                threshold,
            }
        })
        .collect();
    Ok(DetCurve {
        points: lower_envelope(&points),
    })
}

/// Points not dominated by any other: FAR strictly increasing, FRR strictly decreasing.
///
/// Among equal (FAR, FRR) pairs the first in input order is kept.
pub fn lower_envelope(points: &[OperatingPoint]) -> Vec<OperatingPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .far
            .total_cmp(&points[b].far)
            .then(points[a].frr.total_cmp(&points[b].frr))
            .then(a.cmp(&b))
    });
    let mut out: Vec<OperatingPoint> = Vec::new();
    for i in order {
        let p = &points[i];
        if out.last().is_none_or(|last| p.frr < last.frr) {
            out.push(p.clone());
        }
    }
    out
}

impl DetCurve {
    /// FRR at `far`: linear between points, clamped outside.
    pub fn frr_at(&self, far: f64) -> f64 {
        let pts = &self.points;
        let first = &pts[0];
        let last = &pts[pts.len() - 1];
        if far <= first.far {
            return first.frr;
        }
        if far >= last.far {
            return last.frr;
        }
        let k = pts.partition_point(|p| p.far <= far);
        let (a, b) = (&pts[k - 1], &pts[k]);
        a.frr + (b.frr - a.frr) * (far - a.far) / (b.far - a.far)
    }
}

/// Mean FRR over `[far_low, far_high]`.
pub fn auc(curve: &DetCurve, far_low: f64, far_high: f64) -> Result<f64> {
    if !(far_low.is_finite() && far_high.is_finite() && far_low < far_high) {
        return Err(Error::InvalidArgument(format!(
            "invalid FAR range [{far_low}, {far_high}]"
        )));
    }
    if curve.points.is_empty() {
        return Err(Error::Empty("DET curve"));
    }
    let mut knots = vec![far_low];
    knots.extend(
        curve
            .points
            .iter()
            .map(|p| p.far)
            .filter(|&f| f > far_low && f < far_high),
    );
    knots.push(far_high);
    let area: f64 = knots
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (curve.frr_at(w[0]) + curve.frr_at(w[1])))
        .sum();
    Ok((area / (far_high - far_low)).clamp(0.0, 1.0))
}

/// Percentage reduction of `new_auc` relative to `baseline_auc`.
pub fn relative_reduction(baseline_auc: f64, new_auc: f64) -> Result<f64> {
    if !(baseline_auc > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline AUC must be positive, got {baseline_auc}"
        )));
    }
    Ok(100.0 * (1.0 - new_auc / baseline_auc))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Write `<stem>.csv` and `<stem>.svg`; returns both paths.
pub fn emit_plot_data(curves: &[(String, DetCurve)], stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    if curves.is_empty() {
        return Err(Error::Empty("curve list"));
    }
    let stem = stem.as_ref();
    let csv_path = stem.with_extension("csv");
    let svg_path = stem.with_extension("svg");

    let mut csv = String::from("curve_name,far,frr\n");
    for (name, c) in curves {
        for p in &c.points {
            writeln!(csv, "{name},{:.6},{:.6}", p.far, p.frr).unwrap();
        }
    }
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&svg_path, render_svg(curves)).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

fn render_svg(curves: &[(String, DetCurve)]) -> String {
    let min_far = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|p| p.far))
        .filter(|&f| f > 0.0)
        .fold(1e-3f64, f64::min);
    let decades = (-min_far.log10()).ceil().max(1.0);
    let lo = -decades;
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let x = |far: f64| {
        let l = if far > 0.0 { far.log10().max(lo) } else { lo };
        MARGIN + (l - lo) / decades * plot_w
    };
    let y = |frr: f64| MARGIN + (1.0 - frr) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for d in 0..=decades as i32 {
        let e = lo as i32 + d;
        let px = x(10f64.powi(e));
        writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" font-size="12" text-anchor="middle">1e{e}</text>"#,
            SVG_H - MARGIN + 18.0
        )
        .unwrap();
    }
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 6.0,
            y(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">false alarm rate</text>"#,
        SVG_W / 2.0,
        SVG_H - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="15" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 15 {:.2})">false reject rate</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0
    )
    .unwrap();
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.far), y(p.frr)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = MARGIN + 16.0 + 18.0 * i as f64;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{color}" text-anchor="end">{}</text>"#,
            SVG_W - MARGIN - 8.0,
            xml_escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
