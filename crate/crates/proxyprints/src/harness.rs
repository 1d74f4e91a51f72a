//! Parallel evaluation runs over corpora. Work is spread over the current
//! rayon pool; every result vector follows input order.

use anyhow::Result;
use proxyprints_core::aligner::{AliasKey, Rotation, Timestamp};
use proxyprints_core::encoder::{Encoder, EncoderConfig};
use proxyprints_core::evalkit::{
    alias_scores, boundary_scan, cross_key_from_aliases, roc_auc, score, single_axis_trial, BoundaryScanResult,
    CrossKeyMatrix, ScoreSet,
};
use proxyprints_core::imaging::GrayImage;
use proxyprints_core::minutiae::{extract_lenient, perturb_impression, Template};
use proxyprints_core::pipeline::{AliasStore, BreachCheck, PipelineConfig, Transformer};
use proxyprints_core::synth::{seeded_embedding, Synthesizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::CorpusIdentity;

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?.install(f)),
        None => Ok(f()),
    }
}

fn template_or_empty(img: &GrayImage, t: Result<Template, proxyprints_core::Error>) -> Template {
    t.unwrap_or_else(|_| Template::empty(img.width(), img.height()))
}

/// Alias template of every impression; failed captures give empty
/// templates, which score 0.
pub fn alias_templates(tf: &Transformer, ids: &[CorpusIdentity]) -> Vec<Vec<Template>> {
    ids.par_iter()
        .map(|id| id.impressions.iter().map(|img| template_or_empty(img, tf.alias(img).map(|a| a.1))).collect())
        .collect()
}

/// Templates of the raw impressions, for the untransformed baseline.
pub fn raw_templates(ids: &[CorpusIdentity]) -> Vec<Vec<Template>> {
    ids.par_iter().map(|id| id.impressions.iter().map(|img| template_or_empty(img, extract_lenient(img))).collect()).collect()
}

/// Genuine and impostor scores between alias templates, pairs laid out as
/// in [`alias_scores`].
pub fn scores_of(templates: &[Vec<Template>]) -> ScoreSet {
    alias_scores(templates)
}

/// For each identity's first impression `x`: the score between
/// `T^(k+1)(x)` and `T^k(x)`. Failed steps score 0.
pub fn chain_scores(tf: &Transformer, ids: &[CorpusIdentity], k: usize) -> Vec<u32> {
    ids.par_iter()
        .map(|id| {
            let mut img = id.impressions[0].clone();
            for _ in 0..k {
                match tf.transform(&img) {
                    Ok(next) => img = next,
                    Err(_) => return 0,
                }
            }
            let Ok((_, t_next)) = tf.alias(&img) else { return 0 };
            let t_prev = template_or_empty(&img, extract_lenient(&img));
            score(&t_next, &t_prev)
        })
        .collect()
}

/// Cross-key matrix with the aliases computed in parallel; each identity
/// needs two impressions.
pub fn cross_key(tfs: &[Transformer], ids: &[CorpusIdentity]) -> Result<CrossKeyMatrix> {
    let aliases: Vec<Vec<(Template, Template)>> = tfs
        .iter()
        .map(|tf| {
            ids.par_iter()
                .map(|id| {
                    let (a, b) = (&id.impressions[0], &id.impressions[1]);
                    (template_or_empty(a, tf.alias(a).map(|x| x.1)), template_or_empty(b, tf.alias(b).map(|x| x.1)))
                })
                .collect()
        })
        .collect();
    Ok(cross_key_from_aliases(tfs.iter().map(|t| t.key_id().to_string()).collect(), &aliases)?)
}

pub fn boundary_scans(
    synth: &Synthesizer,
    planes: &[(usize, usize)],
    coarse_step_deg: f64,
    threshold: u32,
    rotation: Option<&Rotation>,
) -> Result<Vec<BoundaryScanResult>> {
    planes.par_iter().map(|&p| Ok(boundary_scan(synth, p, coarse_step_deg, threshold, rotation)?)).collect()
}

/// Trial `i` uses seed `seed + i`.
pub fn single_axis_trials(synth: &Synthesizer, trials: usize, delta_deg: f64, planes: usize, seed: u64) -> Result<Vec<u32>> {
    (0..trials as u64).into_par_iter().map(|i| Ok(single_axis_trial(synth, seed.wrapping_add(i), delta_deg, planes)?)).collect()
}

/// A stolen alias print presented again to a sensor: rotated, cropped and
/// noisy like any other impression.
pub fn replay_capture(alias: &GrayImage, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let model = proxyprints_core::synth::ImpressionModel::default();
    let rot = rng.random_range(-model.max_rot_deg..=model.max_rot_deg);
    Ok(perturb_impression(alias, rot, model.crop_frac, model.noise_sd, rng.random())?)
}

/// Breach checks for `probes`, in order.
pub fn breach_checks(store: &AliasStore, probes: &[GrayImage], now: Timestamp) -> Vec<BreachCheck> {
    probes.par_iter().map(|p| store.detect_breach(p, now)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningPoint {
    pub corpus_size: usize,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
}

pub const LEARNING_SIZES: [usize; 5] = [25, 50, 100, 200, 400];
const REFERENCE_SEED: u64 = 90_000;

/// Reference templates for repeat `rep`; sizes nest, so a larger corpus
/// extends a smaller one.
pub fn reference_corpus(synth: &Synthesizer, size: usize, rep: u64) -> Result<Vec<Template>> {
    (0..size as u64)
        .into_par_iter()
        .map(|k| Ok(synth.seeded_template(&seeded_embedding(REFERENCE_SEED + rep * 10_000 + k, synth.dim()))?))
        .collect()
}

/// Pipeline AUC on a fixed evaluation set as the corpus behind the
/// encoder's standardization grows.
pub fn learning_curve(
    key: &AliasKey,
    cfg: &PipelineConfig,
    eval: &[CorpusIdentity],
    sizes: &[usize],
    repeats: u64,
) -> Result<Vec<LearningPoint>> {
    let synth = Synthesizer::new(cfg.n, cfg.synthesis.clone())?;
    sizes
        .iter()
        .map(|&size| {
            let aucs = (0..repeats)
                .map(|rep| {
                    let reference = reference_corpus(&synth, size, rep)?;
                    let encoder = Encoder::fitted(EncoderConfig { n: cfg.n, ..Default::default() }, &reference)?;
                    let tf = Transformer::with_encoder(key, cfg.clone(), encoder)?;
                    Ok(roc_auc(&scores_of(&alias_templates(&tf, eval)))?)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_auc = aucs.iter().sum::<f64>() / aucs.len().max(1) as f64;
            Ok(LearningPoint { corpus_size: size, aucs, mean_auc })
        })
        .collect()
}

/// Seeded generator for harness randomness.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
