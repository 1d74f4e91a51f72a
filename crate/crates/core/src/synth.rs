//! Procedural fingerprint synthesis from unit embeddings.
//!
//! A print is rendered from a phase field: a smooth carrier phase (plane
//! wave bent by curvature and a few low harmonics) plus one phase spiral per
//! minutia. The embedding drives everything through two banks of random
//! Fourier features, a fast one (minutia selection and jitter) and a slow
//! one (carrier shape, ridge frequency, minutia count). Spirals stay where
//! they are placed; a small smooth phase offset around each one decides
//! whether it renders as a ridge ending or a fork. The leading
//! coordinates get an extra, strongly nonlinear gain so that sparse
//! embeddings living in those planes change identity within a few degrees
//! while dense embeddings tolerate encoder noise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{invalid, Result};
use crate::geom::{angle_diff, rad, wrap_tau};
use crate::imaging::{clamp_u8, GrayImage, BACKGROUND, CANONICAL_SIDE};
use crate::minutiae::{perturb_impression, Minutia, MinutiaKind, Template};

/// Public seed for every random table the synthesizer uses.
const TABLE_SEED: u64 = 0x5eed_0f_f1a9e5;
const HIDDEN: usize = 256;
/// Number of leading coordinates that receive the extra gain.
pub const LEAD: usize = 12;
const LEAD_POWER: i32 = 4;
const OMEGA: f64 = 0.55;
const SLOW_RATIO: f64 = 0.25;
/// Gain on the leading plane such that `OMEGA * gain * granularity ≈ GRAIN_PHASE`.
const GRAIN_PHASE: f64 = 0.3;

const PRINT_RADIUS: f64 = 108.0;
const SLOT_RADIUS: f64 = 88.0;
const SLOT_LAYERS: usize = 1;
const SLOT_SPACING: f64 = 12.0;
const MIN_SEPARATION: f64 = 16.0;
const JITTER: f64 = 5.0;
const AMPLITUDE: f64 = 110.0;
const EDGE: f64 = 4.0;
const HARMONIC_FREQ: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    /// Mean ridge frequency in cycles per pixel.
    pub ridge_freq: f64,
    pub field_harmonics: usize,
    /// Target identity span, in degrees, along a leading coordinate plane.
    pub identity_granularity: f64,
    pub min_minutiae: usize,
    pub max_minutiae: usize,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self { ridge_freq: 1.0 / 9.0, field_harmonics: 4, identity_granularity: 8.0, min_minutiae: 25, max_minutiae: 60 }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        if !(1.0 / 20.0..=1.0 / 5.0).contains(&self.ridge_freq) {
            return Err(invalid("ridge_freq must lie in [1/20, 1/5]"));
        }
        if !(5.0..=20.0).contains(&self.identity_granularity) {
            return Err(invalid("identity_granularity must lie in [5, 20] degrees"));
        }
        if self.min_minutiae < 8 || self.min_minutiae > self.max_minutiae || self.max_minutiae > 120 {
            return Err(invalid("minutiae range must satisfy 8 <= min <= max <= 120"));
        }
        if self.field_harmonics > 8 {
            return Err(invalid("at most 8 field harmonics"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Slot {
    x: f64,
    y: f64,
    sign: f64,
}

/// One bank of random Fourier features `sqrt(2/H) * C sin(Ω V z + φ)`,
/// centred and rescaled in [`FeatureBank::eval`].
#[derive(Clone, Debug)]
struct FeatureBank {
    omega: f64,
    dim: usize,
    v: Vec<f64>,
    phase: Vec<f64>,
    readout: Vec<f64>,
    outputs: usize,
}

impl FeatureBank {
    fn new(rng: &mut ChaCha8Rng, dim: usize, outputs: usize, omega: f64) -> Self {
        let v = (0..HIDDEN * dim).map(|_| rng.sample(StandardNormal)).collect();
        let phase = (0..HIDDEN).map(|_| rng.random_range(0.0..TAU)).collect();
        let readout = (0..outputs * HIDDEN).map(|_| rng.sample(StandardNormal)).collect();
        Self { omega, dim, v, phase, readout, outputs }
    }

    /// Features centred on their average over input directions and scaled
    /// to roughly unit spread, whatever the bandwidth.
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let z2: f64 = z.iter().map(|v| v * v).sum();
        let damp = (-0.5 * self.omega * self.omega * z2).exp();
        let spread = (1.0 - (-self.omega * self.omega).exp()).sqrt();
        let hidden: Vec<f64> = (0..HIDDEN)
            .map(|h| {
                let row = &self.v[h * self.dim..(h + 1) * self.dim];
                let dot: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                ((self.omega * dot + self.phase[h]).sin() - self.phase[h].sin() * damp) / spread
            })
            .collect();
        let norm = (2.0 / HIDDEN as f64).sqrt();
        (0..self.outputs)
            .map(|o| {
                let row = &self.readout[o * HIDDEN..(o + 1) * HIDDEN];
                norm * row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// The ridge-pattern layout implied by an embedding, before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub carrier: Carrier,
    pub spirals: Vec<Spiral>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Carrier {
    pub freq: f64,
    pub orientation: f64,
    pub curvature: f64,
    pub harmonics: Vec<(f64, f64, f64, f64)>,
}

impl Carrier {
    /// Smooth phase and its gradient at a pixel.
    fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let c = (CANONICAL_SIDE as f64 - 1.0) / 2.0;
        let (u, v) = ((x - c) / PRINT_RADIUS, (y - c) / PRINT_RADIUS);
        let (s, co) = self.orientation.sin_cos();
        // p along the ridges, q across them.
        let p = co * u + s * v;
        let q = -s * u + co * v;
        let mut val = q + 0.5 * self.curvature * p * p;
        let mut dp = self.curvature * p;
        let mut dq = 1.0;
        for &(a, wx, wy, ph) in &self.harmonics {
            let arg = HARMONIC_FREQ * (wx * u + wy * v) + ph;
            val += a * arg.sin() / HARMONIC_FREQ;
            let g = a * arg.cos();
            // Gradient in (u, v), rotated into (p, q).
            let (gu, gv) = (g * wx, g * wy);
            dp += co * gu + s * gv;
            dq += -s * gu + co * gv;
        }
        let k = TAU * self.freq * PRINT_RADIUS;
        // Back to pixel coordinates.
        let gx = (co * dp - s * dq) * k / PRINT_RADIUS;
        let gy = (s * dp + co * dq) * k / PRINT_RADIUS;
        (k * val, gx, gy)
    }
}

/// Decoder with its public random tables materialized once.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    params: SynthesisParams,
    n: usize,
    gain: f64,
    fast: FeatureBank,
    slow: FeatureBank,
    slots: Vec<Slot>,
    harmonic_dirs: Vec<(f64, f64, f64)>,
    base_orientation: f64,
}

impl Synthesizer {
    pub fn new(n: usize, params: SynthesisParams) -> Result<Self> {
        params.validate()?;
        if n < LEAD {
            return Err(invalid(alloc::format!("dimension {n} below {LEAD}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
        let slots = slot_layout(&mut rng);
        let dim = LEAD + n;
        let fast = FeatureBank::new(&mut rng, dim, 3 * slots.len(), OMEGA);
        let slow = FeatureBank::new(&mut rng, dim, 6 + 2 * 8, OMEGA * SLOW_RATIO);
        let harmonic_dirs = (0..8)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..TAU);
                (a.cos(), a.sin(), rng.random_range(0.0..TAU))
            })
            .collect();
        let base_orientation = rng.random_range(0.0..TAU);
        let gain = GRAIN_PHASE / (OMEGA * rad(params.identity_granularity));
        Ok(Self { params, n, gain, fast, slow, slots, harmonic_dirs, base_orientation })
    }

    pub fn params(&self) -> &SynthesisParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn lift(&self, e: &[f64]) -> Vec<f64> {
        let lead = &e[..LEAD];
        let r2: f64 = lead.iter().map(|v| v * v).sum();
        let g = self.gain * r2.powi(LEAD_POWER / 2);
        let mut z = Vec::with_capacity(LEAD + e.len());
        z.extend(lead.iter().map(|v| g * v));
        z.extend_from_slice(e);
        z
    }

    pub fn layout(&self, e: &Embedding) -> Result<Layout> {
        let values = e.values();
        if values.len() != self.n {
            return Err(invalid(alloc::format!("embedding has {} values, expected {}", values.len(), self.n)));
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(invalid(alloc::format!("embedding norm {norm} is not 1")));
        }
        let z = self.lift(values);
        let fast = self.fast.eval(&z);
        let slow = self.slow.eval(&z);

        let sigmoid = |t: f64| 1.0 / (1.0 + (-t).exp());
        let p = &self.params;
        let span = (p.max_minutiae - p.min_minutiae) as f64;
        let count = p.min_minutiae + (span * sigmoid(2.0 * slow[0] + 1.0)).round() as usize;
        let carrier = Carrier {
            freq: p.ridge_freq * (1.0 + 0.08 * (0.5 * slow[1]).tanh()),
            orientation: self.base_orientation + 0.15 * slow[2],
            curvature: 0.3 * (0.5 * slow[4]).tanh(),
            harmonics: (0..p.field_harmonics)
                .map(|h| {
                    let (wx, wy, ph) = self.harmonic_dirs[h];
                    (0.08 * (0.5 * slow[6 + 2 * h]).tanh(), wx, wy, ph + 0.3 * slow[7 + 2 * h])
                })
                .collect(),
        };

        let c = (CANONICAL_SIDE as f64 - 1.0) / 2.0;
        let mut order: Vec<usize> = (0..self.slots.len()).collect();
        order.sort_by(|&a, &b| fast[3 * b].total_cmp(&fast[3 * a]).then(a.cmp(&b)));
        let mut chosen: Vec<(f64, f64, f64)> = Vec::with_capacity(count);
        for k in order {
            if chosen.len() == count {
                break;
            }
            let s = &self.slots[k];
            let x = c + s.x + JITTER * fast[3 * k + 1];
            let y = c + s.y + JITTER * fast[3 * k + 2];
            if chosen.iter().all(|&(cx, cy, _)| (cx - x).hypot(cy - y) >= MIN_SEPARATION) {
                chosen.push((x, y, s.sign));
            }
        }
        let spirals = pin_spirals(&carrier, &chosen);
        Ok(Layout { carrier, spirals })
    }

    pub fn decode(&self, e: &Embedding) -> Result<GrayImage> {
        Ok(render(&self.layout(e)?))
    }

    /// The seeded minutiae as a template (ground truth for round trips).
    pub fn seeded_template(&self, e: &Embedding) -> Result<Template> {
        let layout = self.layout(e)?;
        Template::new(
            CANONICAL_SIDE,
            CANONICAL_SIDE,
            crate::imaging::DEFAULT_DPI,
            layout.spirals.iter().map(|sp| sp.minutia).collect(),
        )
    }
}

pub fn decode(e: &Embedding, p: &SynthesisParams) -> Result<GrayImage> {
    Synthesizer::new(e.dim(), p.clone())?.decode(e)
}

fn slot_layout(rng: &mut ChaCha8Rng) -> Vec<Slot> {
    let mut slots = Vec::new();
    for _ in 0..SLOT_LAYERS {
        let mut layer: Vec<(f64, f64)> = Vec::new();
        for _ in 0..6000 {
            let x = rng.random_range(-SLOT_RADIUS..SLOT_RADIUS);
            let y = rng.random_range(-SLOT_RADIUS..SLOT_RADIUS);
            if x.hypot(y) > SLOT_RADIUS {
                continue;
            }
            if layer.iter().all(|&(a, b)| (a - x).hypot(b - y) >= SLOT_SPACING) {
                layer.push((x, y));
            }
        }
        slots.extend(layer.into_iter().map(|(x, y)| Slot { x, y, sign: if rng.random_bool(0.5) { 1.0 } else { -1.0 } }));
    }
    slots
}

/// Width of the smooth phase offset that sets each spiral's ridge type.
const BUMP_WIDTH: f64 = 6.0;
const BUMP_REACH: f64 = 3.0 * BUMP_WIDTH;

fn bump(dx: f64, dy: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp()
}

/// A seeded singularity: the minutia it produces, its winding sign and the
/// height of the phase offset centred on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spiral {
    pub minutia: Minutia,
    pub sign: f64,
    pub offset: f64,
}

/// Phase and gradient of everything except spiral `skip`.
fn background_phase(carrier: &Carrier, spirals: &[(f64, f64, f64)], offsets: &[f64], skip: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let (mut phi, mut gx, mut gy) = carrier.eval(x, y);
    for (j, &(qx, qy, s)) in spirals.iter().enumerate() {
        if j == skip {
            continue;
        }
        let (dx, dy) = (x - qx, y - qy);
        let r2 = (dx * dx + dy * dy).max(1e-9);
        phi += s * dy.atan2(dx);
        gx += -s * dy / r2;
        gy += s * dx / r2;
        if r2 < BUMP_REACH * BUMP_REACH {
            let b = offsets[j] * bump(dx, dy);
            let w = BUMP_WIDTH * BUMP_WIDTH;
            phi += b;
            gx -= b * dx / w;
            gy -= b * dy / w;
        }
    }
    (phi, gx, gy)
}

/// Keeps each spiral where it was placed and solves for local phase offsets
/// that turn it into a clean ridge ending or fork, whichever is nearer.
fn pin_spirals(carrier: &Carrier, spirals: &[(f64, f64, f64)]) -> Vec<Spiral> {
    let mut offsets = vec![0.0; spirals.len()];
    let extra_side = |s: f64, gx: f64, gy: f64| gy.atan2(gx) - s * PI / 2.0;
    for _ in 0..6 {
        for k in 0..spirals.len() {
            let (x, y, s) = spirals[k];
            let (phi, gx, gy) = background_phase(carrier, spirals, &offsets, k, x, y);
            let termination = PI - s * extra_side(s, gx, gy);
            let mut delta = angle_diff(termination, phi);
            if delta.abs() > PI / 2.0 {
                delta = angle_diff(termination + PI, phi);
            }
            offsets[k] = delta;
        }
    }
    let side = CANONICAL_SIDE as f64;
    spirals
        .iter()
        .enumerate()
        .map(|(k, &(x, y, s))| {
            let (phi, gx, gy) = background_phase(carrier, spirals, &offsets, k, x, y);
            let e = extra_side(s, gx, gy);
            let kind = if angle_diff(PI - s * e, phi + offsets[k]).abs() <= PI / 2.0 {
                MinutiaKind::Termination
            } else {
                MinutiaKind::Bifurcation
            };
            let minutia = Minutia {
                x: x.clamp(0.0, side - 1.0),
                y: y.clamp(0.0, side - 1.0),
                angle: wrap_tau(e),
                kind,
                quality: 1.0,
            };
            Spiral { minutia, sign: s, offset: offsets[k] }
        })
        .collect()
}

/// Renders a layout: dark ridges where the total phase is near π, fading
/// to background outside the print disk.
pub fn render(layout: &Layout) -> GrayImage {
    let side = CANONICAL_SIDE;
    let c = (side as f64 - 1.0) / 2.0;
    let mut offset = vec![0.0; side * side];
    for sp in &layout.spirals {
        let (mx, my) = (sp.minutia.x, sp.minutia.y);
        let y0 = (my - BUMP_REACH).floor().max(0.0) as usize;
        let y1 = ((my + BUMP_REACH).ceil() as usize).min(side - 1);
        let x0 = (mx - BUMP_REACH).floor().max(0.0) as usize;
        let x1 = ((mx + BUMP_REACH).ceil() as usize).min(side - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                offset[y * side + x] += sp.offset * bump(x as f64 - mx, y as f64 - my);
            }
        }
    }
    let mut img = GrayImage::filled(side, side, BACKGROUND).expect("canonical size is valid");
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64, y as f64);
            let r = (fx - c).hypot(fy - c);
            let fade = ((PRINT_RADIUS - r) / EDGE).clamp(0.0, 1.0);
            if fade == 0.0 {
                continue;
            }
            let (psi, _, _) = layout.carrier.eval(fx, fy);
            // Accumulate the spirals as a complex product to avoid atan2.
            let (im, re) = (psi + offset[y * side + x]).sin_cos();
            let (mut re, mut im) = (re, im);
            for (k, sp) in layout.spirals.iter().enumerate() {
                let (dx, dy) = (fx - sp.minutia.x, fy - sp.minutia.y);
                let dy = dy * sp.sign;
                let (nr, ni) = (re * dx - im * dy, re * dy + im * dx);
                re = nr;
                im = ni;
                if k % 8 == 7 {
                    let mag = re.hypot(im);
                    if mag > 0.0 {
                        re /= mag;
                        im /= mag;
                    }
                }
            }
            let mag = re.hypot(im);
            let cos = if mag > 0.0 { re / mag } else { 0.0 };
            let v = 255.0 - fade * (127.0 - AMPLITUDE * cos);
            img.set(x, y, clamp_u8(v));
        }
    }
    img
}

/// Per-identity impression model: rotation range, cropped area and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionModel {
    pub max_rot_deg: f64,
    pub crop_frac: f64,
    pub noise_sd: f64,
}

impl Default for ImpressionModel {
    fn default() -> Self {
        Self { max_rot_deg: 7.0, crop_frac: 0.11, noise_sd: 4.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Identity {
    pub seed: u64,
    pub embedding: Embedding,
    pub master: GrayImage,
    pub impressions: Vec<GrayImage>,
}

pub const MAX_IMPRESSIONS: usize = 20;

/// Random unit embedding derived from a seed.
pub fn seeded_embedding(seed: u64, n: usize) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d_e471_7e5);
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(e) = Embedding::normalized(v) {
            return e;
        }
    }
}

pub fn generate_identity(seed: u64, impressions: usize) -> Result<Identity> {
    let synth = Synthesizer::new(crate::encoder::DEFAULT_DIM, SynthesisParams::default())?;
    generate_identity_with(&synth, &ImpressionModel::default(), seed, impressions)
}

pub fn generate_identity_with(
    synth: &Synthesizer,
    model: &ImpressionModel,
    seed: u64,
    impressions: usize,
) -> Result<Identity> {
    if impressions > MAX_IMPRESSIONS {
        return Err(invalid(alloc::format!("at most {MAX_IMPRESSIONS} impressions per identity")));
    }
    let embedding = seeded_embedding(seed, synth.dim());
    let master = synth.decode(&embedding)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x1e55);
    let impressions = (0..impressions)
        .map(|_| {
            let rot = rng.random_range(-model.max_rot_deg..=model.max_rot_deg);
            perturb_impression(&master, rot, model.crop_frac, model.noise_sd, rng.random())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Identity { seed, embedding, master, impressions })
}

/// Unit embedding `cos θ · e_a + sin θ · e_b`.
pub fn plane_embedding(n: usize, a: usize, b: usize, theta: f64) -> Result<Embedding> {
    if a == b || a >= n || b >= n {
        return Err(invalid("plane axes must be distinct and below the dimension"));
    }
    let mut v = vec![0.0; n];
    v[a] = theta.cos();
    v[b] = theta.sin();
    Embedding::normalized(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_are_validated() {
        let bad = SynthesisParams { ridge_freq: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthesisParams { identity_granularity: 30.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(SynthesisParams::default().validate().is_ok());
    }

    #[test]
    fn decode_rejects_non_unit_input() {
        let synth = Synthesizer::new(16, SynthesisParams::default()).unwrap();
        let e = Embedding::from_raw(vec![0.5; 16]);
        assert!(synth.decode(&e).is_err());
    }

    #[test]
    fn decode_is_deterministic() {
        let synth = Synthesizer::new(32, SynthesisParams::default()).unwrap();
        let e = seeded_embedding(4, 32);
        assert_eq!(synth.decode(&e).unwrap(), synth.decode(&e).unwrap());
    }

    #[test]
    fn seeded_minutiae_are_separated() {
        let synth = Synthesizer::new(64, SynthesisParams::default()).unwrap();
        for seed in 0..10 {
            let t = synth.seeded_template(&seeded_embedding(seed, 64)).unwrap();
            assert!((25..=60).contains(&t.len()));
            let m = t.minutiae();
            for i in 0..m.len() {
                for j in i + 1..m.len() {
                    assert!((m[i].x - m[j].x).hypot(m[i].y - m[j].y) > 6.0);
                }
            }
        }
    }

    #[test]
    fn generate_identity_limits_impressions() {
        assert!(generate_identity(1, 21).is_err());
    }
}
