//! Template embeddings on the unit hypersphere.
//!
//! The descriptor is a smoothed histogram over ordered minutia pairs: pair
//! distance against the direction of the first minutia relative to the pair
//! segment, and pair distance against the direction difference of the two
//! minutiae. Both are unchanged by rotating or translating the template.
//! The histogram is standardized against public reference statistics,
//! projected with a seeded Gaussian matrix and normalized.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
#[allow(unused_imports)]
use num_traits::Float;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{angle_diff, rad, wrap_tau};
use crate::minutiae::{MinutiaKind, Template, MATCHER_READY};

pub const DEFAULT_DIM: usize = 512;
pub const DEFAULT_PROJECTION_SEED: u64 = 0x0e4c_0de5_512;
const REFERENCE_SEED: u64 = 0x4ef_e4e4ce;
const REFERENCE_SIZE: usize = 96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Scales `values` to unit length.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Degenerate("embedding has zero or non-finite norm".into()));
        }
        Ok(Self { values: values.into_iter().map(|v| v / norm).collect() })
    }

    /// Wraps values without normalizing (callers must validate).
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Angle between two embeddings in radians.
    pub fn angle_to(&self, other: &Embedding) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        (dot / (self.norm() * other.norm())).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n: usize,
    pub radial_bins: usize,
    pub angular_bins: usize,
    pub projection_seed: u64,
    /// Required gap between intra- and inter-identity angles, radians.
    pub separation_margin: f64,
    pub max_distance: f64,
    pub distance_bandwidth: f64,
    pub angle_bandwidth: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_DIM,
            radial_bins: 12,
            angular_bins: 24,
            projection_seed: DEFAULT_PROJECTION_SEED,
            separation_margin: rad(10.0),
            max_distance: 192.0,
            distance_bandwidth: 8.0,
            angle_bandwidth: rad(15.0),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(invalid("embedding dimension must be at least 8"));
        }
        if self.radial_bins < 4 || self.angular_bins < 4 {
            return Err(invalid("descriptor needs at least 4 bins per axis"));
        }
        if !(self.max_distance > 0.0 && self.distance_bandwidth > 0.0 && self.angle_bandwidth > 0.0) {
            return Err(invalid("descriptor ranges must be positive"));
        }
        Ok(())
    }

    fn descriptor_len(&self) -> usize {
        2 * self.radial_bins * self.angular_bins + 2
    }
}

/// Encoder with its projection and reference statistics materialized.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    projection: Vec<f64>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Encoder {
    /// Encoder standardized against the public synthetic reference set.
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        let synth = crate::synth::Synthesizer::new(cfg.n.max(crate::synth::LEAD), Default::default())?;
        let reference = (0..REFERENCE_SIZE as u64)
            .map(|k| synth.seeded_template(&crate::synth::seeded_embedding(REFERENCE_SEED + k, synth.dim())))
            .collect::<Result<Vec<_>>>()?;
        Self::fitted(cfg, &reference)
    }

    /// Encoder whose descriptor standardization is estimated from
    /// `reference`.
    pub fn fitted(cfg: EncoderConfig, reference: &[Template]) -> Result<Self> {
        cfg.validate()?;
        if reference.len() < 2 {
            return Err(invalid("reference statistics need at least 2 templates"));
        }
        let d = cfg.descriptor_len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.projection_seed);
        let scale = 1.0 / (d as f64).sqrt();
        let projection = (0..cfg.n * d).map(|_| { let g: f64 = StandardNormal.sample(&mut rng); scale * g }).collect();

        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for t in reference {
            let h = descriptor(t, &cfg);
            for i in 0..d {
                sum[i] += h[i];
                sq[i] += h[i] * h[i];
            }
        }
        let m = reference.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
        let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, mu)| (q / m - mu * mu).max(0.0)).collect();
        let floor = var.iter().sum::<f64>() / d as f64 * 0.25;
        let inv_std = var.iter().map(|v| 1.0 / (v + floor).sqrt()).collect();
        Ok(Self { cfg, projection, mean, inv_std })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn encode(&self, t: &Template) -> Result<Embedding> {
        if t.len() < MATCHER_READY {
            return Err(Error::LowQuality { found: t.len(), required: MATCHER_READY, partial: None });
        }
        let h = descriptor(t, &self.cfg);
        let d = h.len();
        let x: Vec<f64> = (0..d).map(|i| (h[i] - self.mean[i]) * self.inv_std[i]).collect();
        let out: Vec<f64> = (0..self.cfg.n)
            .map(|r| self.projection[r * d..(r + 1) * d].iter().zip(&x).map(|(p, v)| p * v).sum())
            .collect();
        Embedding::normalized(out)
    }
}

pub fn encode(t: &Template, cfg: &EncoderConfig) -> Result<Embedding> {
    Encoder::new(cfg.clone())?.encode(t)
}

/// Smoothed, weight-normalized pair histogram plus kind proportions.
pub fn descriptor(t: &Template, cfg: &EncoderConfig) -> Vec<f64> {
    let (nr, na) = (cfg.radial_bins, cfg.angular_bins);
    let mut h = vec![0.0; cfg.descriptor_len()];
    let m = t.minutiae();
    let dr = cfg.max_distance / nr as f64;
    let da = TAU / na as f64;
    let rad_reach = (3.0 * cfg.distance_bandwidth / dr).ceil() as isize;
    let ang_reach = (3.0 * cfg.angle_bandwidth / da).ceil() as isize;
    let mut total = 0.0;
    let mut rw = vec![0.0; nr];
    let mut aw = vec![0.0; na];
    let splat = |h: &mut [f64], offset: usize, d: f64, a: f64, w: f64, rw: &mut [f64], aw: &mut [f64]| {
        let rc = (d / dr - 0.5).round() as isize;
        let ac = (a / da - 0.5).round() as isize;
        let mut rsum = 0.0;
        for r in (rc - rad_reach).max(0)..=(rc + rad_reach).min(nr as isize - 1) {
            let centre = (r as f64 + 0.5) * dr;
            let z = (d - centre) / cfg.distance_bandwidth;
            rw[r as usize] = (-0.5 * z * z).exp();
            rsum += rw[r as usize];
        }
        let mut asum = 0.0;
        for k in ac - ang_reach..=ac + ang_reach {
            let bin = k.rem_euclid(na as isize) as usize;
            let centre = (bin as f64 + 0.5) * da;
            let z = angle_diff(a, centre) / cfg.angle_bandwidth;
            aw[bin] = (-0.5 * z * z).exp();
            asum += aw[bin];
        }
        if rsum == 0.0 || asum == 0.0 {
            return;
        }
        for r in (rc - rad_reach).max(0)..=(rc + rad_reach).min(nr as isize - 1) {
            let wr = w * rw[r as usize] / rsum;
            for k in ac - ang_reach..=ac + ang_reach {
                let bin = k.rem_euclid(na as isize) as usize;
                h[offset + r as usize * na + bin] += wr * aw[bin] / asum;
            }
        }
    };
    for i in 0..m.len() {
        for j in 0..m.len() {
            if i == j {
                continue;
            }
            let (dx, dy) = (m[j].x - m[i].x, m[j].y - m[i].y);
            let d = dx.hypot(dy);
            if d >= cfg.max_distance {
                continue;
            }
            let w = m[i].quality * m[j].quality;
            if w <= 0.0 {
                continue;
            }
            let phi = dy.atan2(dx);
            splat(&mut h, 0, d, wrap_tau(m[i].angle - phi), w, &mut rw, &mut aw);
            splat(&mut h, nr * na, d, wrap_tau(m[j].angle - m[i].angle), w, &mut rw, &mut aw);
            total += w;
        }
    }
    if total > 0.0 {
        for v in &mut h[..2 * nr * na] {
            *v /= total;
        }
    }
    let qsum: f64 = m.iter().map(|x| x.quality).sum();
    if qsum > 0.0 {
        let term: f64 = m.iter().filter(|x| x.kind == MinutiaKind::Termination).map(|x| x.quality).sum();
        let base = 2 * nr * na;
        h[base] = term / qsum;
        h[base + 1] = 1.0 - term / qsum;
    }
    h
}
