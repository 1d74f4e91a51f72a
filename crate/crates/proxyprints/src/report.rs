//! Evaluation reports as CSV and JSON files.
//!
//! Files written by [`export_report`]:
//! - `scores.csv`: `index,label,score`, genuine rows first, label `genuine`
//!   or `impostor`;
//! - `metrics.csv`: `metric,value` (only when both classes are present);
//! - `baseline_metrics.csv`: the same for untransformed matching, when run;
//! - `hist_genuine.csv`, `hist_impostor.csv`: `bin_left,count`, bins of
//!   `bin_width` starting at 0;
//! - `cross_key.csv`: `key_i,key_j,mean_score` (with a cross-key run);
//! - `boundary.csv`: `plane_a,plane_b,identity,start_deg,span_deg` (with
//!   boundary scans; the identity straddling 0° starts at the last
//!   transition);
//! - `learning_curve.csv`: `corpus_size,mean_auc` (with a learning curve);
//! - `report.json`: everything above plus the active configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use proxyprints_core::evalkit::{histogram, BoundaryScanResult, CrossKeyMatrix, Histogram, Metrics, ScoreSet};
use serde::Serialize;

use crate::config::Config;
use crate::harness::LearningPoint;

pub const DEFAULT_BIN_WIDTH: u32 = 5;

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub config: Config,
    pub threshold: u32,
    pub bin_width: u32,
    pub scores: ScoreSet,
    pub metrics: Option<Metrics>,
    /// Metrics of matching the raw captures directly.
    pub baseline: Option<Metrics>,
    pub cross_key: Option<CrossKeyMatrix>,
    pub boundary: Vec<BoundaryScanResult>,
    pub learning_curve: Vec<LearningPoint>,
}

impl Report {
    pub fn new(config: Config, threshold: u32, scores: ScoreSet) -> Self {
        let metrics = proxyprints_core::evalkit::metrics(&scores, threshold).ok();
        Self {
            config,
            threshold,
            bin_width: DEFAULT_BIN_WIDTH,
            scores,
            metrics,
            baseline: None,
            cross_key: None,
            boundary: Vec::new(),
            learning_curve: Vec::new(),
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_scores(path: &Path, s: &ScoreSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "label", "score"])?;
    for (i, (score, genuine)) in s.labeled().into_iter().enumerate() {
        w.write_record([i.to_string(), if genuine { "genuine" } else { "impostor" }.into(), score.to_string()])?;
    }
    Ok(w.flush()?)
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_left", "count"])?;
    for (left, count) in &h.bins {
        w.write_record([left.to_string(), count.to_string()])?;
    }
    Ok(w.flush()?)
}

fn write_metrics(path: &Path, m: &Metrics) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["metric", "value"])?;
    let rows = [
        ("roc_auc", m.roc_auc),
        ("pr_auc", m.pr_auc),
        ("eer", m.eer),
        ("accuracy", m.accuracy),
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
        ("accuracy_at_far_0.1", m.accuracy_at_far_10),
        ("accuracy_at_frr_0.1", m.accuracy_at_frr_10),
    ];
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    Ok(w.flush()?)
}

fn write_cross_key(path: &Path, m: &CrossKeyMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["key_i", "key_j", "mean_score"])?;
    for i in 0..m.size() {
        for j in 0..m.size() {
            w.write_record([m.key_ids[i].clone(), m.key_ids[j].clone(), m.at(i, j).to_string()])?;
        }
    }
    Ok(w.flush()?)
}

fn write_boundary(path: &Path, scans: &[BoundaryScanResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["plane_a", "plane_b", "identity", "start_deg", "span_deg"])?;
    for s in scans {
        let starts: Vec<f64> = match s.transitions.as_slice() {
            [] => vec![0.0],
            t => t.to_vec(),
        };
        for (k, (start, span)) in starts.iter().zip(&s.spans).enumerate() {
            w.write_record([s.plane.0.to_string(), s.plane.1.to_string(), k.to_string(), start.to_string(), span.to_string()])?;
        }
    }
    Ok(w.flush()?)
}

fn write_learning(path: &Path, points: &[LearningPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["corpus_size", "mean_auc"])?;
    for p in points {
        w.write_record([p.corpus_size.to_string(), p.mean_auc.to_string()])?;
    }
    Ok(w.flush()?)
}

/// Writes the report files into `dir` (created if needed) and returns
/// their paths.
pub fn export_report(dir: &Path, r: &Report) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_scores(&out("scores.csv"), &r.scores)?;
    if let Some(m) = &r.metrics {
        write_metrics(&out("metrics.csv"), m)?;
    }
    if let Some(m) = &r.baseline {
        write_metrics(&out("baseline_metrics.csv"), m)?;
    }
    write_histogram(&out("hist_genuine.csv"), &histogram(&r.scores.genuine, r.bin_width)?)?;
    write_histogram(&out("hist_impostor.csv"), &histogram(&r.scores.impostor, r.bin_width)?)?;
    if let Some(m) = &r.cross_key {
        write_cross_key(&out("cross_key.csv"), m)?;
    }
    if !r.boundary.is_empty() {
        write_boundary(&out("boundary.csv"), &r.boundary)?;
    }
    if !r.learning_curve.is_empty() {
        write_learning(&out("learning_curve.csv"), &r.learning_curve)?;
    }
    let json = serde_json::to_vec_pretty(r)?;
    let p = out("report.json");
    fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?;
    Ok(written)
}
