//! Evaluation harness: verification metrics over match scores, score
//! histograms, cross-key linkability and identity-boundary scans along
//! great circles of the embedding sphere.
//!
//! Scores above the threshold are accepts; genuine pairs are positives.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{apply, Rotation};
use crate::encoder::Embedding;
use crate::error::{invalid, Error, Result};
use crate::geom::rad;
use crate::imaging::GrayImage;
use crate::matcher::match_templates;
use crate::minutiae::{extract_lenient, Template};
use crate::pipeline::Transformer;
use crate::synth::{plane_embedding, Synthesizer};

/// Transitions are localized to this many degrees.
pub const SCAN_RESOLUTION_DEG: f64 = 0.1;
pub const MAX_COARSE_STEP_DEG: f64 = 5.0;
pub const DEFAULT_COARSE_STEP_DEG: f64 = 2.0;
pub const DEFAULT_PLANES: usize = 10;
/// Identities needed for a meaningful cross-key matrix.
pub const MIN_CROSS_KEY_IDENTITIES: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<u32>,
    pub impostor: Vec<u32>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<u32>, impostor: Vec<u32>) -> Self {
        Self { genuine, impostor }
    }

    /// Splits `(score, is_genuine)` samples.
    pub fn from_labeled(samples: impl IntoIterator<Item = (u32, bool)>) -> Self {
        let mut s = Self::default();
        for (score, genuine) in samples {
            if genuine { s.genuine.push(score) } else { s.impostor.push(score) }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Genuine samples first, then impostors.
    pub fn labeled(&self) -> Vec<(u32, bool)> {
        self.genuine.iter().map(|&s| (s, true)).chain(self.impostor.iter().map(|&s| (s, false))).collect()
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "need both classes, got {} genuine and {} impostor scores",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        Ok(())
    }

    /// Fraction of impostor scores above `t`.
    pub fn far(&self, t: i64) -> f64 {
        frac_above(&self.impostor, t)
    }

    /// Fraction of genuine scores at or below `t`.
    pub fn frr(&self, t: i64) -> f64 {
        1.0 - frac_above(&self.genuine, t)
    }

    fn confusion(&self, t: i64) -> Confusion {
        let tp = self.genuine.iter().filter(|&&s| s as i64 > t).count();
        let fp = self.impostor.iter().filter(|&&s| s as i64 > t).count();
        Confusion { tp, fp, fneg: self.genuine.len() - tp, tn: self.impostor.len() - fp }
    }

    /// Thresholds where some rate changes, plus one below every score.
    fn cut_points(&self) -> Vec<i64> {
        let mut t: Vec<i64> = self.genuine.iter().chain(&self.impostor).map(|&s| s as i64).collect();
        t.push(t.iter().copied().min().unwrap_or(0) - 1);
        t.sort_unstable();
        t.dedup();
        t
    }
}

fn frac_above(scores: &[u32], t: i64) -> f64 {
    scores.iter().filter(|&&s| s as i64 > t).count() as f64 / scores.len() as f64
}

struct Confusion {
    tp: usize,
    fp: usize,
    fneg: usize,
    tn: usize,
}

impl Confusion {
    fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.tp + self.fp + self.fneg + self.tn) as f64
    }

    fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fneg)
    }
}

/// `a / b`, taken as 0 when nothing was counted.
fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub eer: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy_at_far_10: f64,
    pub accuracy_at_frr_10: f64,
}

/// ROC points `(false accept rate, true accept rate)` from accept-all down
/// to reject-all.
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    s.check()?;
    Ok(s.cut_points().into_iter().map(|t| (s.far(t), 1.0 - s.frr(t))).collect())
}

/// Trapezoidal area under the ROC curve, which runs from (1, 1) to (0, 0).
pub fn roc_auc(s: &ScoreSet) -> Result<f64> {
    let roc = roc_curve(s)?;
    let mut area = 0.0;
    for w in roc.windows(2) {
        area += (w[0].0 - w[1].0) * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area)
}

/// Area under the precision-recall curve as average precision: precision
/// at each threshold weighted by the recall it adds.
pub fn average_precision(s: &ScoreSet) -> Result<f64> {
    s.check()?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in s.cut_points().into_iter().rev() {
        let c = s.confusion(t);
        let r = c.recall();
        if r > prev_recall {
            ap += (r - prev_recall) * c.precision();
            prev_recall = r;
        }
    }
    Ok(ap)
}

/// Equal error rate, interpolated linearly between the two thresholds that
/// bracket the crossing of false accept and false reject rates. A scorer
/// no better than chance gets 0.5, the rate a coin flip achieves.
pub fn eer(s: &ScoreSet) -> Result<f64> {
    s.check()?;
    let pts: Vec<(f64, f64)> = s.cut_points().into_iter().map(|t| (s.far(t), s.frr(t))).collect();
    for w in pts.windows(2) {
        let (d0, d1) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
        if d0 >= 0.0 && d1 <= 0.0 {
            let a = if d0 == d1 { 0.0 } else { d0 / (d0 - d1) };
            return Ok((w[0].0 + a * (w[1].0 - w[0].0)).min(0.5));
        }
    }
    // The first cut accepts everything (difference 1) and the last rejects
    // everything (difference -1), so a bracket always exists.
    unreachable!("rate difference changes sign between the extreme thresholds")
}

pub fn metrics(s: &ScoreSet, threshold: u32) -> Result<Metrics> {
    s.check()?;
    let c = s.confusion(threshold as i64);
    let (precision, recall) = (c.precision(), c.recall());
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let cuts = s.cut_points();
    let at_far = cuts.iter().copied().find(|&t| s.far(t) <= 0.1).expect("the top cut rejects every impostor");
    let at_frr = cuts.iter().copied().rev().find(|&t| s.frr(t) <= 0.1).expect("the bottom cut accepts every genuine");
    Ok(Metrics {
        roc_auc: roc_auc(s)?,
        pr_auc: average_precision(s)?,
        eer: eer(s)?,
        accuracy: c.accuracy(),
        precision,
        recall,
        f1,
        accuracy_at_far_10: s.confusion(at_far).accuracy(),
        accuracy_at_frr_10: s.confusion(at_frr).accuracy(),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("rank correlation needs two equally long samples of size 2 or more"));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedMetric("constant sample has no rank correlation".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Fixed-width score histogram; bins are `[left, left + width)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: u32,
    /// `(bin_left, count)` from 0 up to the bin holding the largest score.
    pub bins: Vec<(u32, usize)>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.1).sum()
    }
}

pub fn histogram(scores: &[u32], bin_width: u32) -> Result<Histogram> {
    if bin_width == 0 {
        return Err(invalid("bin width must be positive"));
    }
    let nbins = scores.iter().max().map_or(0, |&m| (m / bin_width) as usize + 1);
    let mut bins: Vec<(u32, usize)> = (0..nbins).map(|k| (k as u32 * bin_width, 0)).collect();
    for &s in scores {
        bins[(s / bin_width) as usize].1 += 1;
    }
    Ok(Histogram { bin_width, bins })
}

/// Mean match scores between aliases made under different keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossKeyMatrix {
    pub key_ids: Vec<String>,
    /// Row-major, `key_ids.len()` squared.
    pub means: Vec<f64>,
}

impl CrossKeyMatrix {
    pub fn size(&self) -> usize {
        self.key_ids.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.means[i * self.size() + j]
    }
}

/// Alias templates of two impressions of one finger under one key. A
/// capture that cannot be aliased contributes an empty template, which
/// matches nothing.
pub fn alias_pair(tf: &Transformer, first: &GrayImage, second: &GrayImage) -> (Template, Template) {
    let alias = |img: &GrayImage| match tf.alias(img) {
        Ok((_, t)) => t,
        Err(_) => Template::empty(img.width(), img.height()),
    };
    (alias(first), alias(second))
}

/// Scores a template pair, treating unmatchable templates as score 0.
pub fn score(a: &Template, b: &Template) -> u32 {
    match_templates(a, b).map_or(0, |s| s.value())
}

/// Cross-key matrix from precomputed aliases: `aliases[k][i]` holds the
/// alias templates of identity `i`'s two impressions under key `k`. The
/// diagonal pairs the two impressions; off-diagonal entries pair the
/// first impression under both keys.
pub fn cross_key_from_aliases(key_ids: Vec<String>, aliases: &[Vec<(Template, Template)>]) -> Result<CrossKeyMatrix> {
    let k = aliases.len();
    if k == 0 || key_ids.len() != k {
        return Err(Error::Degenerate("one alias set per key required".into()));
    }
    let ids = aliases[0].len();
    if ids < MIN_CROSS_KEY_IDENTITIES || aliases.iter().any(|a| a.len() != ids) {
        return Err(Error::Degenerate(format!(
            "cross-key matrix needs at least {MIN_CROSS_KEY_IDENTITIES} identities under every key"
        )));
    }
    let mut means = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let total: u32 = (0..ids)
                .map(|id| if i == j { score(&aliases[i][id].0, &aliases[i][id].1) } else { score(&aliases[i][id].0, &aliases[j][id].0) })
                .sum();
            means[i * k + j] = total as f64 / ids as f64;
        }
    }
    Ok(CrossKeyMatrix { key_ids, means })
}

/// Sequential cross-key matrix over `(first, second)` impression pairs.
pub fn cross_key_matrix(transformers: &[Transformer], impressions: &[(GrayImage, GrayImage)]) -> Result<CrossKeyMatrix> {
    let aliases: Vec<Vec<(Template, Template)>> =
        transformers.iter().map(|tf| impressions.iter().map(|(a, b)| alias_pair(tf, a, b)).collect()).collect();
    cross_key_from_aliases(transformers.iter().map(|t| t.key_id().into()).collect(), &aliases)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScanResult {
    pub plane: (usize, usize),
    /// Angles in degrees where the decoded identity changes, increasing,
    /// in `[0, 360)`.
    pub transitions: Vec<f64>,
    /// Angular extent of each identity met on the circle, in degrees. The
    /// identity straddling 0° is listed last.
    pub spans: Vec<f64>,
}

impl BoundaryScanResult {
    pub fn identity_count(&self) -> usize {
        self.spans.len()
    }
}

/// Template of the print decoded from `cos θ · e_a + sin θ · e_b`,
/// optionally rotated first.
pub fn plane_template(synth: &Synthesizer, plane: (usize, usize), theta_deg: f64, rotation: Option<&Rotation>) -> Result<Template> {
    let mut e = plane_embedding(synth.dim(), plane.0, plane.1, rad(theta_deg))?;
    if let Some(r) = rotation {
        e = Embedding::normalized(apply(r, &e)?.values().to_vec())?;
    }
    extract_lenient(&synth.decode(&e)?)
}

/// Walks the great circle through two axes in coarse steps. Whenever the
/// print stops matching the current reference the transition is narrowed
/// down by bisection and the reference moves to the new identity, so spans
/// measure consecutive identities.
pub fn boundary_scan(
    synth: &Synthesizer,
    plane: (usize, usize),
    coarse_step_deg: f64,
    threshold: u32,
    rotation: Option<&Rotation>,
) -> Result<BoundaryScanResult> {
    if !(coarse_step_deg > 0.0 && coarse_step_deg <= MAX_COARSE_STEP_DEG) {
        return Err(invalid(format!("coarse step must lie in (0, {MAX_COARSE_STEP_DEG}] degrees")));
    }
    let at = |theta: f64| plane_template(synth, plane, theta, rotation);
    let accepts = |a: &Template, b: &Template| score(a, b) > threshold;

    let mut reference = at(0.0)?;
    let mut transitions = Vec::new();
    let mut last_same = 0.0;
    let mut theta = coarse_step_deg.min(360.0);
    loop {
        let t = at(theta)?;
        if accepts(&reference, &t) {
            last_same = theta;
        } else {
            let (mut lo, mut hi, mut hi_t) = (last_same, theta, t);
            while hi - lo > SCAN_RESOLUTION_DEG {
                let mid = (lo + hi) / 2.0;
                let m = at(mid)?;
                if accepts(&reference, &m) {
                    lo = mid;
                } else {
                    (hi, hi_t) = (mid, m);
                }
            }
            transitions.push(hi % 360.0);
            reference = hi_t;
            last_same = hi;
            if hi < theta {
                // Check the coarse point again against the new identity.
                continue;
            }
        }
        if theta >= 360.0 {
            break;
        }
        theta = (theta + coarse_step_deg).min(360.0);
    }
    transitions.sort_by(f64::total_cmp);
    transitions.dedup();
    let spans = spans_from_transitions(&transitions);
    Ok(BoundaryScanResult { plane, transitions, spans })
}

/// Identity spans around the circle given sorted transition angles.
pub fn spans_from_transitions(transitions: &[f64]) -> Vec<f64> {
    match transitions {
        [] | [_] => vec![360.0],
        _ => {
            let mut spans: Vec<f64> = transitions.windows(2).map(|w| w[1] - w[0]).collect();
            spans.push(360.0 - transitions[transitions.len() - 1] + transitions[0]);
            spans
        }
    }
}

/// Consecutive axis pairs `(0, 1), (1, 2), ...`.
pub fn default_planes(count: usize) -> Vec<(usize, usize)> {
    (0..count).map(|a| (a, a + 1)).collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Score between prints decoded at a random point of a random default
/// plane and `delta_deg` further along it.
pub fn single_axis_trial(synth: &Synthesizer, seed: u64, delta_deg: f64, planes: usize) -> Result<u32> {
    if planes == 0 || planes + 1 > synth.dim() {
        return Err(invalid("plane count must be positive and fit the dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0..planes);
    let theta: f64 = rng.random_range(0.0..360.0);
    let first = plane_template(synth, (a, a + 1), theta, None)?;
    let second = plane_template(synth, (a, a + 1), theta + delta_deg, None)?;
    Ok(score(&first, &second))
}

/// Genuine scores between every pair of alias templates of one identity,
/// impostor scores between the first alias of each identity and the
/// second alias of every other identity.
pub fn alias_scores(aliases: &[Vec<Template>]) -> ScoreSet {
    let mut s = ScoreSet::default();
    for (i, a) in aliases.iter().enumerate() {
        for p in 0..a.len() {
            for q in p + 1..a.len() {
                s.genuine.push(score(&a[p], &a[q]));
            }
        }
        for (j, b) in aliases.iter().enumerate() {
            if i != j && !a.is_empty() && b.len() > 1 {
                s.impostor.push(score(&a[0], &b[1]));
            }
        }
    }
    s
}
