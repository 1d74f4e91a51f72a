//! Fingerprint rasters and the low-level image operations the rest of the
//! pipeline is built on: normalization, block orientation estimation,
//! oriented band-pass enhancement and the capture-quality proxy.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::wrap_pi;

pub const MIN_SIDE: usize = 64;
pub const CANONICAL_SIDE: usize = 256;
pub const DEFAULT_DPI: u16 = 500;
pub const DEFAULT_BLOCK: usize = 16;
/// Background luminance (light) used for padding and fills.
pub const BACKGROUND: u8 = 255;

/// 8-bit grayscale raster, row-major, dark ridges on a light background.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    dpi: u16,
    pixels: Vec<u8>,
}

impl core::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("dpi", &self.dpi)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(invalid(alloc::format!(
                "image {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if pixels.len() != width * height {
            return Err(invalid(alloc::format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(Self { width, height, dpi: DEFAULT_DPI, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn with_dpi(mut self, dpi: u16) -> Self {
        self.dpi = dpi;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dpi(&self) -> u16 {
        self.dpi
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pixels.iter().map(|&p| (p as f64 - m).powi(2)).sum::<f64>() / self.pixels.len() as f64
    }

    /// Bilinear sample at a real-valued position; `fill` outside the raster.
    pub fn sample(&self, x: f64, y: f64, fill: f64) -> f64 {
        if !(x > -1.0 && y > -1.0 && x < self.width as f64 && y < self.height as f64) {
            return fill;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let px = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                fill
            } else {
                self.get(xi as usize, yi as usize) as f64
            }
        };
        let a = px(x0, y0);
        let b = px(x0 + 1.0, y0);
        let c = px(x0, y0 + 1.0);
        let d = px(x0 + 1.0, y0 + 1.0);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    pub(crate) fn from_f64(width: usize, height: usize, dpi: u16, data: &[f64]) -> Self {
        let pixels = data.iter().map(|&v| clamp_u8(v)).collect();
        Self { width, height, dpi, pixels }
    }
}

#[inline]
pub(crate) fn clamp_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

/// Block grid of ridge orientations (radians in `[0, π)`) and coherences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationField {
    pub block_size: usize,
    pub cols: usize,
    pub rows: usize,
    pub angles: Vec<f64>,
    pub coherence: Vec<f64>,
}

impl OrientationField {
    pub fn angle(&self, col: usize, row: usize) -> f64 {
        self.angles[row * self.cols + col]
    }

    pub fn coherence_at(&self, col: usize, row: usize) -> f64 {
        self.coherence[row * self.cols + col]
    }

    pub fn mean_coherence(&self) -> f64 {
        self.coherence.iter().sum::<f64>() / self.coherence.len() as f64
    }

    /// Orientation and coherence at a pixel, interpolated between block
    /// centres in the doubled-angle domain.
    pub fn at_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let b = self.block_size as f64;
        let gx = (x + 0.5) / b - 0.5;
        let gy = (y + 0.5) / b - 0.5;
        let c0 = gx.floor();
        let r0 = gy.floor();
        let fx = gx - c0;
        let fy = gy - r0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        let mut wsum = 0.0;
        for (dc, dr, w) in [
            (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
            (1.0, 0.0, fx * (1.0 - fy)),
            (0.0, 1.0, (1.0 - fx) * fy),
            (1.0, 1.0, fx * fy),
        ] {
            let c = (c0 + dc).clamp(0.0, (self.cols - 1) as f64) as usize;
            let r = (r0 + dr).clamp(0.0, (self.rows - 1) as f64) as usize;
            let a = self.angle(c, r);
            let coh = self.coherence_at(c, r);
            vx += w * coh * (2.0 * a).cos();
            vy += w * coh * (2.0 * a).sin();
            wsum += w;
        }
        let coh = (vx * vx + vy * vy).sqrt() / wsum.max(1e-12);
        (wrap_pi(0.5 * vy.atan2(vx)), coh.min(1.0))
    }
}

/// Linear mean/variance normalization. Constant images map to a constant
/// image at `target_mean`.
pub fn normalize(img: &GrayImage, target_mean: f64, target_var: f64) -> GrayImage {
    let m = img.mean();
    let v = img.variance();
    if v <= f64::EPSILON {
        let fill = clamp_u8(target_mean);
        return GrayImage { pixels: vec![fill; img.pixels.len()], ..img.clone() };
    }
    let scale = (target_var.max(0.0) / v).sqrt();
    let pixels = img
        .pixels
        .iter()
        .map(|&p| clamp_u8(target_mean + (p as f64 - m) * scale))
        .collect();
    GrayImage { pixels, ..img.clone() }
}

/// Sobel gradients with clamped borders.
pub(crate) fn sobel(data: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        data[yc * w + xc]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let sx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx[y as usize * w + x as usize] = sx;
            gy[y as usize * w + x as usize] = sy;
        }
    }
    (gx, gy)
}

struct BlockMoments {
    cols: usize,
    rows: usize,
    gxx: Vec<f64>,
    gxy: Vec<f64>,
    mag: Vec<f64>,
}

fn block_moments(img: &GrayImage, block: usize) -> BlockMoments {
    let (w, h) = (img.width, img.height);
    let (gx, gy) = sobel(&img.to_f64(), w, h);
    let cols = w.div_ceil(block);
    let rows = h.div_ceil(block);
    let mut gxx = vec![0.0; cols * rows];
    let mut gxy = vec![0.0; cols * rows];
    let mut mag = vec![0.0; cols * rows];
    for y in 0..h {
        let r = y / block;
        for x in 0..w {
            let c = x / block;
            let i = y * w + x;
            let (a, b) = (gx[i], gy[i]);
            gxx[r * cols + c] += a * a - b * b;
            gxy[r * cols + c] += 2.0 * a * b;
            mag[r * cols + c] += a * a + b * b;
        }
    }
    BlockMoments { cols, rows, gxx, gxy, mag }
}

fn field_from_moments(m: &BlockMoments, block: usize, smooth: bool) -> OrientationField {
    let (cols, rows) = (m.cols, m.rows);
    let mut angles = vec![0.0; cols * rows];
    let mut coherence = vec![0.0; cols * rows];
    for r in 0..rows {
        for c in 0..cols {
            let (mut sxx, mut sxy, mut smag) = (0.0, 0.0, 0.0);
            let span: isize = if smooth { 1 } else { 0 };
            for dr in -span..=span {
                for dc in -span..=span {
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    let w = if dr == 0 && dc == 0 { 2.0 } else { 1.0 };
                    let j = rr as usize * cols + cc as usize;
                    sxx += w * m.gxx[j];
                    sxy += w * m.gxy[j];
                    smag += w * m.mag[j];
                }
            }
            let i = r * cols + c;
            if smag > 1e-9 {
                // Gradient direction is normal to the ridges.
                angles[i] = wrap_pi(0.5 * sxy.atan2(sxx) + PI / 2.0);
                coherence[i] = ((sxx * sxx + sxy * sxy).sqrt() / smag).clamp(0.0, 1.0);
            }
        }
    }
    OrientationField { block_size: block, cols, rows, angles, coherence }
}

/// Least-squares block orientation from squared gradients, lightly
/// smoothed over the 3x3 block neighbourhood.
pub fn estimate_orientation(img: &GrayImage, block_size: usize) -> Result<OrientationField> {
    if !(8..=32).contains(&block_size) {
        return Err(invalid(alloc::format!("block size {block_size} outside [8, 32]")));
    }
    if img.width < block_size || img.height < block_size {
        return Err(invalid("image smaller than one block"));
    }
    Ok(field_from_moments(&block_moments(img, block_size), block_size, true))
}

/// Coherence below which a block is considered structureless.
pub const FLAT_COHERENCE: f64 = 1e-3;

const GABOR_ORIENTATIONS: usize = 16;

struct GaborBank {
    radius: isize,
    kernels: Vec<Vec<f64>>,
}

impl GaborBank {
    fn new(freq: f64) -> Self {
        let sigma_across = 0.35 / freq;
        let sigma_along = 0.45 / freq;
        let radius = (2.5 * sigma_along).ceil() as isize;
        let side = (2 * radius + 1) as usize;
        let mut kernels = Vec::with_capacity(GABOR_ORIENTATIONS);
        for k in 0..GABOR_ORIENTATIONS {
            let theta = k as f64 * PI / GABOR_ORIENTATIONS as f64;
            let (s, c) = theta.sin_cos();
            let mut g = vec![0.0; side * side];
            let mut env = vec![0.0; side * side];
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (fx, fy) = (dx as f64, dy as f64);
                    let across = -fx * s + fy * c;
                    let along = fx * c + fy * s;
                    let e = (-0.5 * (across * across / (sigma_across * sigma_across)
                        + along * along / (sigma_along * sigma_along)))
                        .exp();
                    let i = ((dy + radius) as usize) * side + (dx + radius) as usize;
                    env[i] = e;
                    g[i] = e * (2.0 * PI * freq * across).cos();
                }
            }
            // Zero DC, then unit gain for a matched sinusoid.
            let dc = g.iter().sum::<f64>() / env.iter().sum::<f64>();
            for (gi, ei) in g.iter_mut().zip(&env) {
                *gi -= dc * ei;
            }
            let mut gain = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let across = -(dx as f64) * s + (dy as f64) * c;
                    let i = ((dy + radius) as usize) * side + (dx + radius) as usize;
                    gain += g[i] * (2.0 * PI * freq * across).cos();
                }
            }
            for gi in g.iter_mut() {
                *gi /= gain;
            }
            kernels.push(g);
        }
        Self { radius, kernels }
    }
}

/// Output gain applied to the band-pass response.
const ENHANCE_GAIN: f64 = 1.5;

/// Oriented band-pass (Gabor) filtering along the local ridge orientation.
/// Structureless blocks are passed through unchanged.
pub fn enhance(img: &GrayImage, field: &OrientationField, ridge_freq: f64) -> Result<GrayImage> {
    if !(1.0 / 20.0 - 1e-12..=1.0 / 5.0 + 1e-12).contains(&ridge_freq) {
        return Err(invalid(alloc::format!("ridge frequency {ridge_freq} outside [1/20, 1/5]")));
    }
    let bank = GaborBank::new(ridge_freq);
    let (w, h) = (img.width, img.height);
    let data = img.to_f64();
    let side = (2 * bank.radius + 1) as usize;
    let r = bank.radius;
    let mut out = img.pixels.clone();
    for y in 0..h {
        for x in 0..w {
            let col = (x / field.block_size).min(field.cols - 1);
            let row = (y / field.block_size).min(field.rows - 1);
            if field.coherence_at(col, row) < FLAT_COHERENCE {
                continue;
            }
            let (theta, _) = field.at_pixel(x as f64, y as f64);
            let k = ((theta / PI * GABOR_ORIENTATIONS as f64).round() as usize) % GABOR_ORIENTATIONS;
            let kern = &bank.kernels[k];
            let mut acc = 0.0;
            let interior = x as isize >= r
                && y as isize >= r
                && (x as isize) < w as isize - r
                && (y as isize) < h as isize - r;
            if interior {
                for ky in 0..side {
                    let row_off = (y + ky - r as usize) * w + x - r as usize;
                    let krow = &kern[ky * side..(ky + 1) * side];
                    let drow = &data[row_off..row_off + side];
                    acc += krow.iter().zip(drow).map(|(a, b)| a * b).sum::<f64>();
                }
            } else {
                for ky in 0..side {
                    let yy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                    for kx in 0..side {
                        let xx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += kern[ky * side + kx] * data[yy * w + xx];
                    }
                }
            }
            out[y * w + x] = clamp_u8(128.0 + ENHANCE_GAIN * acc);
        }
    }
    Ok(GrayImage { pixels: out, ..img.clone() })
}

/// Per-block standard deviation on the grid used by `block_moments`.
pub(crate) fn block_std(img: &GrayImage, block: usize) -> (usize, usize, Vec<f64>) {
    let cols = img.width.div_ceil(block);
    let rows = img.height.div_ceil(block);
    let mut sum = vec![0.0; cols * rows];
    let mut sq = vec![0.0; cols * rows];
    let mut n = vec![0.0; cols * rows];
    for y in 0..img.height {
        for x in 0..img.width {
            let i = (y / block) * cols + x / block;
            let p = img.get(x, y) as f64;
            sum[i] += p;
            sq[i] += p * p;
            n[i] += 1.0;
        }
    }
    let std = (0..cols * rows)
        .map(|i| {
            let m = sum[i] / n[i];
            (sq[i] / n[i] - m * m).max(0.0).sqrt()
        })
        .collect();
    (cols, rows, std)
}

/// Block standard deviation above which a block counts as print foreground.
pub const FOREGROUND_STD: f64 = 12.0;

/// Capture-quality proxy in 0..=100: product of foreground coverage, mean
/// block coherence over the foreground and local contrast. Not NFIQ2.
pub fn quality_proxy(img: &GrayImage) -> u8 {
    let block = DEFAULT_BLOCK;
    let (_, _, std) = block_std(img, block);
    let moments = block_moments(img, block);
    let field = field_from_moments(&moments, block, false);
    let mut fg = 0usize;
    let mut coh = 0.0;
    let mut contrast = 0.0;
    for (i, &s) in std.iter().enumerate() {
        if s >= FOREGROUND_STD {
            fg += 1;
            coh += field.coherence[i];
            contrast += (s / 50.0).min(1.0);
        }
    }
    if fg == 0 {
        return 0;
    }
    let coverage = fg as f64 / std.len() as f64;
    let coh = coh / fg as f64;
    let contrast = contrast / fg as f64;
    let q = 100.0 * coverage.min(1.0).sqrt() * coh.powf(0.75) * contrast.sqrt() * 1.25;
    q.round().clamp(0.0, 100.0) as u8
}

/// Rotates about the image centre by `degrees` (positive turns +x toward +y).
pub fn rotate(img: &GrayImage, degrees: f64, fill: u8) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (s, c) = crate::geom::rad(degrees).sin_cos();
    let mut out = vec![fill; w * h];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse rotation to find the source.
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            out[y * w + x] = clamp_u8(img.sample(sx, sy, fill as f64));
        }
    }
    GrayImage { pixels: out, ..img.clone() }
}

pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = img.get(w - 1 - x, y);
        }
    }
    GrayImage { pixels: out, ..img.clone() }
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let data = img.to_f64();
    let out = blur_f64(&data, img.width, img.height, sigma);
    GrayImage::from_f64(img.width, img.height, img.dpi, &out)
}

pub(crate) fn blur_f64(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * data[y * w + xx];
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

/// Bilinear resampling to `width` x `height`.
pub fn resample(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let fill = BACKGROUND as f64;
    GrayImage::from_fn(width, height, |x, y| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, img.width as f64 - 1.0);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, img.height as f64 - 1.0);
        clamp_u8(img.sample(fx, fy, fill))
    })
    .map(|g| g.with_dpi(img.dpi))
}

/// Pads to a square with background and resamples to the canonical
/// 256x256 raster. Canonical inputs are returned unchanged.
pub fn to_canonical(img: &GrayImage) -> Result<GrayImage> {
    if img.width == CANONICAL_SIDE && img.height == CANONICAL_SIDE {
        return Ok(img.clone());
    }
    let side = img.width.max(img.height);
    let ox = (side - img.width) / 2;
    let oy = (side - img.height) / 2;
    let square = GrayImage::from_fn(side, side, |x, y| {
        if x >= ox && y >= oy && x - ox < img.width && y - oy < img.height {
            img.get(x - ox, y - oy)
        } else {
            BACKGROUND
        }
    })?;
    resample(&square, CANONICAL_SIDE, CANONICAL_SIDE)
}

/// Block-level foreground map (`true` = print area).
pub fn foreground_blocks(img: &GrayImage, block: usize) -> (usize, usize, Vec<bool>) {
    let (cols, rows, std) = block_std(img, block);
    (cols, rows, std.iter().map(|&s| s >= FOREGROUND_STD).collect())
}

/// Flips polarity when the print foreground is lighter than the background.
pub fn ensure_dark_ridges(img: &GrayImage) -> GrayImage {
    let block = DEFAULT_BLOCK;
    let (cols, _, fg) = foreground_blocks(img, block);
    let (mut fsum, mut fn_, mut bsum, mut bn) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.get(x, y) as f64;
            if fg[(y / block) * cols + x / block] {
                fsum += p;
                fn_ += 1.0;
            } else {
                bsum += p;
                bn += 1.0;
            }
        }
    }
    if fn_ == 0.0 || bn == 0.0 {
        return img.clone();
    }
    if fsum / fn_ > bsum / bn {
        let pixels = img.pixels.iter().map(|&p| 255 - p).collect();
        GrayImage { pixels, ..img.clone() }
    } else {
        img.clone()
    }
}

/// Crops to the bounding box of the foreground blocks, then brings the
/// result to the canonical raster.
pub fn contour_crop(img: &GrayImage) -> Result<GrayImage> {
    let block = DEFAULT_BLOCK;
    let (cols, rows, fg) = foreground_blocks(img, block);
    let (mut c0, mut c1, mut r0, mut r1) = (cols, 0, rows, 0);
    for r in 0..rows {
        for c in 0..cols {
            if fg[r * cols + c] {
                c0 = c0.min(c);
                c1 = c1.max(c);
                r0 = r0.min(r);
                r1 = r1.max(r);
            }
        }
    }
    if c0 > c1 || r0 > r1 {
        return to_canonical(img);
    }
    let x0 = c0 * block;
    let y0 = r0 * block;
    let x1 = ((c1 + 1) * block).min(img.width);
    let y1 = ((r1 + 1) * block).min(img.height);
    let (cw, ch) = ((x1 - x0).max(MIN_SIDE), (y1 - y0).max(MIN_SIDE));
    let cropped = GrayImage::from_fn(cw, ch, |x, y| {
        let (sx, sy) = (x0 + x, y0 + y);
        if sx < x1 && sy < y1 {
            img.get(sx, sy)
        } else {
            BACKGROUND
        }
    })?
    .with_dpi(img.dpi);
    to_canonical(&cropped)
}


#[cfg(test)]
mod tests {
    use super::test_patterns::*;
    use super::*;
    use crate::geom::{deg, orientation_diff, rad};

    #[test]
    fn rejects_small_or_inconsistent_buffers() {
        assert!(GrayImage::new(32, 64, vec![0; 32 * 64]).is_err());
        assert!(GrayImage::new(64, 64, vec![0; 10]).is_err());
    }

    #[test]
    fn normalize_constant_image() {
        let img = GrayImage::filled(64, 64, 128).unwrap();
        let out = normalize(&img, 100.0, 500.0);
        assert!(out.pixels().iter().all(|&p| p == 100));
    }

    #[test]
    fn normalize_identity_at_own_statistics() {
        let img = ridges(96, 20.0, 9.0, 80.0);
        let out = normalize(&img, img.mean(), img.variance());
        assert_eq!(out, img);
    }

    #[test]
    fn normalize_checkerboard_mean() {
        let img = checkerboard(64);
        let out = normalize(&img, 128.0, 1000.0);
        // Summation oracle for the output mean.
        let total: u64 = out.pixels().iter().map(|&p| p as u64).sum();
        let mean = total as f64 / out.pixels().len() as f64;
        assert!((127.0..=129.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn normalize_is_idempotent_at_target() {
        let img = ridges(128, 65.0, 8.0, 60.0);
        let once = normalize(&img, 120.0, 900.0);
        let twice = normalize(&once, 120.0, 900.0);
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn orientation_of_parallel_ridges() {
        let img = ridges(128, 30.0, 9.0, 100.0);
        let field = estimate_orientation(&img, 16).unwrap();
        for (a, c) in field.angles.iter().zip(&field.coherence) {
            assert!(deg(orientation_diff(*a, rad(30.0))) < 3.0, "angle {}", deg(*a));
            assert!(*c > 0.9);
        }
    }

    #[test]
    fn orientation_of_uniform_image_has_no_coherence() {
        let img = GrayImage::filled(64, 64, 200).unwrap();
        let field = estimate_orientation(&img, 16).unwrap();
        assert!(field.coherence.iter().all(|&c| c < 1e-6));
    }

    #[test]
    fn orientation_rejects_bad_block_size() {
        let img = GrayImage::filled(64, 64, 200).unwrap();
        assert!(estimate_orientation(&img, 4).is_err());
        assert!(estimate_orientation(&img, 33).is_err());
    }

    #[test]
    fn orientation_is_rotation_equivariant() {
        let img = ridges(192, 30.0, 9.0, 100.0);
        let turned = rotate(&img, 45.0, BACKGROUND);
        let field = estimate_orientation(&turned, 16).unwrap();
        let mut checked = 0;
        for r in 3..field.rows - 3 {
            for c in 3..field.cols - 3 {
                if field.coherence_at(c, r) > 0.8 {
                    checked += 1;
                    let a = field.angle(c, r);
                    assert!(deg(orientation_diff(a, rad(75.0))) < 3.0, "angle {}", deg(a));
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn enhance_uniform_is_identity() {
        let img = GrayImage::filled(64, 64, 90).unwrap();
        let field = estimate_orientation(&img, 16).unwrap();
        assert_eq!(enhance(&img, &field, 1.0 / 9.0).unwrap(), img);
    }

    #[test]
    fn enhance_rejects_out_of_band_frequency() {
        let img = ridges(64, 0.0, 9.0, 50.0);
        let field = estimate_orientation(&img, 16).unwrap();
        assert!(enhance(&img, &field, 0.3).is_err());
        assert!(enhance(&img, &field, 0.01).is_err());
    }

    fn central_variance(img: &GrayImage) -> f64 {
        let mut v = Vec::new();
        for y in 32..img.height() - 32 {
            for x in 32..img.width() - 32 {
                v.push(img.get(x, y) as f64);
            }
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|p| (p - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn enhance_keeps_dimensions_and_contrast() {
        let img = ridges(128, 40.0, 9.0, 40.0);
        let field = estimate_orientation(&img, 16).unwrap();
        let out = enhance(&img, &field, 1.0 / 9.0).unwrap();
        assert_eq!((out.width(), out.height()), (128, 128));
        assert!(central_variance(&out) >= central_variance(&img));
        assert_eq!(out, enhance(&img, &field, 1.0 / 9.0).unwrap());
    }

    #[test]
    fn quality_of_blank_is_zero() {
        assert_eq!(quality_proxy(&GrayImage::filled(256, 256, 255).unwrap()), 0);
    }

    #[test]
    fn quality_prefers_sharp_over_blurred() {
        let img = ridges(256, 25.0, 9.0, 100.0);
        let blurred = gaussian_blur(&img, 4.0);
        assert!(quality_proxy(&img) > quality_proxy(&blurred));
    }

    #[test]
    fn quality_flip_invariant() {
        let img = ridges(256, 25.0, 9.0, 100.0);
        assert_eq!(quality_proxy(&img), quality_proxy(&flip_horizontal(&img)));
    }

    #[test]
    fn polarity_is_fixed_for_inverted_prints() {
        // Light ridges on a dark background inside a bordered frame.
        let base = ridges(128, 0.0, 9.0, 100.0);
        let framed = GrayImage::from_fn(128, 128, |x, y| {
            if (32..96).contains(&x) && (32..96).contains(&y) {
                base.get(x, y)
            } else {
                255
            }
        })
        .unwrap();
        let inverted = GrayImage::from_fn(128, 128, |x, y| 255 - framed.get(x, y)).unwrap();
        assert_eq!(ensure_dark_ridges(&inverted), framed);
        assert_eq!(ensure_dark_ridges(&framed), framed);
    }

    #[test]
    fn canonical_resampling() {
        let img = GrayImage::filled(300, 200, 255).unwrap();
        let c = to_canonical(&img).unwrap();
        assert_eq!((c.width(), c.height()), (256, 256));
    }
}
