//! Minutiae templates: extraction from ridge images, the RGB template
//! rendering, and the impression-variation model used to fake repeated
//! scans of the same finger.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{angle_diff, rotate_point, wrap_pi, wrap_tau};
use crate::imaging::{
    self, clamp_u8, ensure_dark_ridges, estimate_orientation, GrayImage, OrientationField,
    BACKGROUND, CANONICAL_SIDE,
};

pub const MAX_MINUTIAE: usize = 512;
/// Minimum count for a template to be usable by the matcher and encoder.
pub const MATCHER_READY: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinutiaKind {
    Termination,
    Bifurcation,
}

/// A ridge ending or split. `angle` points into the ridge for terminations
/// and into the fork for bifurcations, in `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub kind: MinutiaKind,
    pub quality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct Template {
    pub width: usize,
    pub height: usize,
    pub dpi: u16,
    minutiae: Vec<Minutia>,
}

/// Unchecked wire form; deserialization goes through [`Template::new`].
#[derive(Deserialize)]
struct RawTemplate {
    width: usize,
    height: usize,
    dpi: u16,
    minutiae: Vec<Minutia>,
}

impl TryFrom<RawTemplate> for Template {
    type Error = Error;

    fn try_from(r: RawTemplate) -> Result<Self> {
        Template::new(r.width, r.height, r.dpi, r.minutiae)
    }
}

impl Template {
    pub fn new(width: usize, height: usize, dpi: u16, minutiae: Vec<Minutia>) -> Result<Self> {
        if minutiae.len() > MAX_MINUTIAE {
            return Err(invalid(alloc::format!("{} minutiae exceed {MAX_MINUTIAE}", minutiae.len())));
        }
        for m in &minutiae {
            if !(m.x >= 0.0 && m.y >= 0.0 && m.x < width as f64 && m.y < height as f64) {
                return Err(invalid(alloc::format!("minutia ({}, {}) out of bounds", m.x, m.y)));
            }
            if !(0.0..TAU).contains(&m.angle) {
                return Err(invalid(alloc::format!("angle {} not normalized", m.angle)));
            }
            if !(0.0..=1.0).contains(&m.quality) {
                return Err(invalid(alloc::format!("quality {} outside [0, 1]", m.quality)));
            }
        }
        Ok(Self { width, height, dpi, minutiae })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, dpi: imaging::DEFAULT_DPI, minutiae: Vec::new() }
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn is_matcher_ready(&self) -> bool {
        self.minutiae.len() >= MATCHER_READY
    }

    /// Rigidly moves every minutia (rotation about the raster centre, then
    /// translation). Minutiae leaving the raster are dropped.
    pub fn rigid_moved(&self, angle: f64, tx: f64, ty: f64) -> Template {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let minutiae = self
            .minutiae
            .iter()
            .filter_map(|m| {
                let (x, y) = rotate_point(m.x, m.y, cx, cy, angle);
                let (x, y) = (x + tx, y + ty);
                (x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64)
                    .then_some(Minutia { x, y, angle: wrap_tau(m.angle + angle), ..*m })
            })
            .collect();
        Template { minutiae, ..self.clone() }
    }

    /// Mirror image about the vertical centre line.
    pub fn mirrored(&self) -> Template {
        let minutiae = self
            .minutiae
            .iter()
            .map(|m| Minutia {
                x: self.width as f64 - 1.0 - m.x,
                angle: wrap_tau(PI - m.angle),
                ..*m
            })
            .collect();
        Template { minutiae, ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct ExtractConfig {
    pub block_size: usize,
    pub ridge_freq: f64,
    pub enhance: bool,
    /// Candidates closer than this to the print boundary are discarded.
    pub border_margin: f64,
    pub min_spacing: f64,
    pub spur_len: usize,
    pub trace_len: usize,
    /// Thinning pulls ridge endings back into the ridge and fork points back
    /// towards the stem; both are moved this many ridge periods forward
    /// to the point where the ridge actually ends or splits.
    pub endpoint_shift: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            block_size: imaging::DEFAULT_BLOCK,
            ridge_freq: 1.0 / 9.0,
            enhance: true,
            border_margin: 14.0,
            min_spacing: 6.0,
            spur_len: 10,
            trace_len: 10,
            endpoint_shift: 0.25,
        }
    }
}

pub fn extract(img: &GrayImage) -> Result<Template> {
    extract_with(img, &ExtractConfig::default())
}

/// Binarize, thin, classify by crossing number, prune spurs/bridges/broken
/// ridges and score each survivor by local coherence.
pub fn extract_with(img: &GrayImage, cfg: &ExtractConfig) -> Result<Template> {
    let img = ensure_dark_ridges(img);
    let (w, h) = (img.width(), img.height());
    let field = estimate_orientation(&img, cfg.block_size)?;
    let mask = pixel_mask(&img);
    let dist = distance_to_background(&mask, w, h);
    let source = if cfg.enhance { imaging::enhance(&img, &field, cfg.ridge_freq)? } else { img.clone() };
    let mut ridge = binarize(&source, &mask);
    clean_components(&mut ridge, w, h, 12);
    // A ridge fork is a valley ending; the valley skeleton gives its direction.
    let mut valley: Vec<bool> = ridge.iter().zip(&mask).map(|(&r, &m)| m && !r).collect();
    clean_components(&mut valley, w, h, 12);
    let valley_skel = thin(valley, w, h);
    let skel = thin(ridge, w, h);

    let mut cands = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !skel[y * w + x] || dist[y * w + x] < cfg.border_margin {
                continue;
            }
            match crossing_number(&skel, w, x, y) {
                1 => cands.push(Candidate { x, y, kind: MinutiaKind::Termination, angle: 0.0, alive: true }),
                3 => cands.push(Candidate { x, y, kind: MinutiaKind::Bifurcation, angle: 0.0, alive: true }),
                _ => {}
            }
        }
    }

    // Spurs: a termination whose ridge reaches a junction within spur_len.
    for i in 0..cands.len() {
        if cands[i].kind != MinutiaKind::Termination {
            continue;
        }
        let trace = trace_from(&skel, w, h, (cands[i].x, cands[i].y), None, cfg.spur_len);
        if let Some((jx, jy)) = trace.junction {
            cands[i].alive = false;
            for c in cands.iter_mut() {
                if c.kind == MinutiaKind::Bifurcation
                    && (c.x as isize - jx as isize).abs() <= 2
                    && (c.y as isize - jy as isize).abs() <= 2
                {
                    c.alive = false;
                }
            }
        }
    }

    for c in cands.iter_mut().filter(|c| c.alive) {
        c.angle = match c.kind {
            MinutiaKind::Termination => {
                let t = trace_from(&skel, w, h, (c.x, c.y), None, cfg.trace_len);
                let (ex, ey) = t.end;
                (ey as f64 - c.y as f64).atan2(ex as f64 - c.x as f64)
            }
            MinutiaKind::Bifurcation => valley_ending_direction(&valley_skel, w, h, c.x, c.y, cfg.trace_len)
                .unwrap_or_else(|| bifurcation_direction(&skel, w, h, c.x, c.y, cfg.trace_len)),
        };
        let (theta, _) = field.at_pixel(c.x as f64, c.y as f64);
        c.angle = snap_to_orientation(c.angle, theta);
    }

    // Broken ridges (facing terminations) and bridges (close bifurcations).
    let alive: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].alive).collect();
    let mut kill = vec![false; cands.len()];
    for (ai, &i) in alive.iter().enumerate() {
        for &j in &alive[ai + 1..] {
            let (a, b) = (&cands[i], &cands[j]);
            if a.kind != b.kind {
                continue;
            }
            let d = a.dist(b);
            let pair = match a.kind {
                MinutiaKind::Termination => {
                    d < 12.0 && angle_diff(a.angle, b.angle + PI).abs() < PI / 3.0
                }
                MinutiaKind::Bifurcation => d < 8.0,
            };
            if pair {
                kill[i] = true;
                kill[j] = true;
            }
        }
    }

    let mut found: Vec<Minutia> = Vec::new();
    let mut order: Vec<(f64, usize)> = alive
        .iter()
        .filter(|&&i| !kill[i])
        .map(|&i| {
            let c = &cands[i];
            let (_, coh) = field.at_pixel(c.x as f64, c.y as f64);
            let edge = (dist[c.y * w + c.x] / (2.0 * cfg.border_margin)).min(1.0);
            ((coh * edge).clamp(0.0, 1.0), i)
        })
        .collect();
    // Highest quality first so that merging keeps the better point.
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (q, i) in order {
        let c = &cands[i];
        let (x, y) = (c.x as f64, c.y as f64);
        if found.iter().any(|m| (m.x - x).hypot(m.y - y) < cfg.min_spacing) {
            continue;
        }
        let shift = cfg.endpoint_shift / cfg.ridge_freq * if c.kind == MinutiaKind::Termination { -1.0 } else { 1.0 };
        let x = (x + shift * c.angle.cos()).clamp(0.0, w as f64 - 1.0);
        let y = (y + shift * c.angle.sin()).clamp(0.0, h as f64 - 1.0);
        found.push(Minutia { x, y, angle: wrap_tau(c.angle), kind: c.kind, quality: q });
        if found.len() == MAX_MINUTIAE {
            break;
        }
    }
    found.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    let template = Template { width: w, height: h, dpi: img.dpi(), minutiae: found };
    if template.len() < MATCHER_READY {
        return Err(Error::LowQuality {
            found: template.len(),
            required: MATCHER_READY,
            partial: Some(Box::new(template)),
        });
    }
    Ok(template)
}

/// Extraction that keeps the partial template on low quality.
pub fn extract_lenient(img: &GrayImage) -> Result<Template> {
    match extract(img) {
        Err(Error::LowQuality { partial: Some(t), .. }) => Ok(*t),
        other => other,
    }
}

struct Candidate {
    x: usize,
    y: usize,
    kind: MinutiaKind,
    angle: f64,
    alive: bool,
}

impl Candidate {
    fn dist(&self, o: &Candidate) -> f64 {
        (self.x as f64 - o.x as f64).hypot(self.y as f64 - o.y as f64)
    }
}

/// Picks the field orientation (or its reverse) closest to a traced direction.
fn snap_to_orientation(traced: f64, theta: f64) -> f64 {
    if angle_diff(traced, theta).abs() <= PI / 2.0 {
        theta
    } else {
        theta + PI
    }
}

const WINDOW: usize = 17;

/// Per-pixel foreground from local standard deviation.
fn pixel_mask(img: &GrayImage) -> Vec<bool> {
    let (w, h) = (img.width(), img.height());
    let (sum, sq) = integral(img);
    let r = WINDOW / 2;
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
            let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let s = rect(&sum, w, x0, y0, x1, y1);
            let q = rect(&sq, w, x0, y0, x1, y1);
            let m = s / n;
            let var = (q / n - m * m).max(0.0);
            mask[y * w + x] = var.sqrt() >= imaging::FOREGROUND_STD;
        }
    }
    mask
}

fn integral(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut sum = vec![0.0; (w + 1) * (h + 1)];
    let mut sq = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let (mut rs, mut rq) = (0.0, 0.0);
        for x in 0..w {
            let p = img.get(x, y) as f64;
            rs += p;
            rq += p * p;
            sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + rs;
            sq[(y + 1) * (w + 1) + x + 1] = sq[y * (w + 1) + x + 1] + rq;
        }
    }
    (sum, sq)
}

fn rect(t: &[f64], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    let s = w + 1;
    t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0]
}

/// Chamfer distance to the nearest background pixel or raster edge.
fn distance_to_background(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    let big = 1e9;
    let mut d: Vec<f64> = mask.iter().map(|&m| if m { big } else { 0.0 }).collect();
    let (a, b) = (1.0, core::f64::consts::SQRT_2);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let edge = (x.min(w - 1 - x).min(y).min(h - 1 - y)) as f64 + 1.0;
            let mut v = d[i].min(edge);
            if x > 0 {
                v = v.min(d[i - 1] + a);
            }
            if y > 0 {
                v = v.min(d[i - w] + a);
                if x > 0 {
                    v = v.min(d[i - w - 1] + b);
                }
                if x + 1 < w {
                    v = v.min(d[i - w + 1] + b);
                }
            }
            d[i] = v;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            let mut v = d[i];
            if x + 1 < w {
                v = v.min(d[i + 1] + a);
            }
            if y + 1 < h {
                v = v.min(d[i + w] + a);
                if x + 1 < w {
                    v = v.min(d[i + w + 1] + b);
                }
                if x > 0 {
                    v = v.min(d[i + w - 1] + b);
                }
            }
            d[i] = v;
        }
    }
    d
}

const BINARIZE_WINDOW: usize = 15;

/// Ridge (dark) pixels inside the mask, thresholded at the local mean.
fn binarize(img: &GrayImage, mask: &[bool]) -> Vec<bool> {
    let (w, h) = (img.width(), img.height());
    let (sum, _) = integral(img);
    let r = BINARIZE_WINDOW / 2;
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
            let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let m = rect(&sum, w, x0, y0, x1, y1) / n;
            out[y * w + x] = (img.get(x, y) as f64) < m;
        }
    }
    out
}

/// Removes small ridge specks and fills small holes.
fn clean_components(bin: &mut [bool], w: usize, h: usize, min_size: usize) {
    for target in [true, false] {
        let mut seen = vec![false; w * h];
        let mut queue = VecDeque::new();
        let mut comp = Vec::new();
        for start in 0..w * h {
            if seen[start] || bin[start] != target {
                continue;
            }
            comp.clear();
            seen[start] = true;
            queue.push_back(start);
            let mut touches_edge = false;
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                let (x, y) = (i % w, i / w);
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    touches_edge = true;
                }
                let neigh = [
                    (x > 0).then(|| i - 1),
                    (x + 1 < w).then(|| i + 1),
                    (y > 0).then(|| i - w),
                    (y + 1 < h).then(|| i + w),
                ];
                for j in neigh.into_iter().flatten() {
                    if !seen[j] && bin[j] == target {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if comp.len() < min_size && !(touches_edge && !target) {
                for &i in &comp {
                    bin[i] = !target;
                }
            }
        }
    }
}

/// Neighbours P2..P9 clockwise from north.
#[inline]
fn neighbours(img: &[bool], w: usize, x: usize, y: usize) -> [bool; 8] {
    let i = y * w + x;
    [
        img[i - w],
        img[i - w + 1],
        img[i + 1],
        img[i + w + 1],
        img[i + w],
        img[i + w - 1],
        img[i - 1],
        img[i - w - 1],
    ]
}

const OFFSETS: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Zhang-Suen thinning to a one-pixel skeleton.
fn thin(mut img: Vec<bool>, w: usize, h: usize) -> Vec<bool> {
    for x in 0..w {
        img[x] = false;
        img[(h - 1) * w + x] = false;
    }
    for y in 0..h {
        img[y * w] = false;
        img[y * w + w - 1] = false;
    }
    let mut marked = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            marked.clear();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if !img[y * w + x] {
                        continue;
                    }
                    let p = neighbours(&img, w, x, y);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        marked.push(y * w + x);
                    }
                }
            }
            if !marked.is_empty() {
                changed = true;
                for &i in &marked {
                    img[i] = false;
                }
            }
        }
        if !changed {
            break;
        }
    }
    img
}

fn crossing_number(skel: &[bool], w: usize, x: usize, y: usize) -> usize {
    let p = neighbours(skel, w, x, y);
    (0..8).filter(|&k| p[k] != p[(k + 1) % 8]).count() / 2
}

struct Trace {
    end: (usize, usize),
    junction: Option<(usize, usize)>,
}

/// Walks along the skeleton from `start` (optionally entering via `first`)
/// for up to `max_len` steps, stopping at junctions.
fn trace_from(
    skel: &[bool],
    w: usize,
    h: usize,
    start: (usize, usize),
    first: Option<(usize, usize)>,
    max_len: usize,
) -> Trace {
    let mut visited: Vec<(usize, usize)> = vec![start];
    let mut cur = match first {
        Some(f) => f,
        None => match next_pixel(skel, w, h, start, &visited) {
            Some(n) => n,
            None => return Trace { end: start, junction: None },
        },
    };
    for _ in 0..max_len {
        visited.push(cur);
        if cur.0 == 0 || cur.1 == 0 || cur.0 + 1 >= w || cur.1 + 1 >= h {
            break;
        }
        if crossing_number(skel, w, cur.0, cur.1) >= 3 {
            return Trace { end: cur, junction: Some(cur) };
        }
        match next_pixel(skel, w, h, cur, &visited) {
            Some(n) => cur = n,
            None => break,
        }
    }
    Trace { end: cur, junction: None }
}

fn next_pixel(
    skel: &[bool],
    w: usize,
    h: usize,
    at: (usize, usize),
    visited: &[(usize, usize)],
) -> Option<(usize, usize)> {
    // 4-neighbours first so staircase corners are not skipped.
    let order = [0usize, 2, 4, 6, 1, 3, 5, 7];
    for k in order {
        let (dx, dy) = OFFSETS[k];
        let nx = at.0 as isize + dx;
        let ny = at.1 as isize + dy;
        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
            continue;
        }
        let n = (nx as usize, ny as usize);
        if skel[n.1 * w + n.0] && !visited.iter().rev().take(4).any(|&v| v == n) && !visited.contains(&n) {
            return Some(n);
        }
    }
    None
}

/// Direction of the nearest valley ending within a few pixels of a fork,
/// traced into the valley (which runs between the fork's branches).
fn valley_ending_direction(vskel: &[bool], w: usize, h: usize, x: usize, y: usize, len: usize) -> Option<f64> {
    const REACH: isize = 6;
    let mut best: Option<((usize, usize), isize)> = None;
    for dy in -REACH..=REACH {
        for dx in -REACH..=REACH {
            let (px, py) = (x as isize + dx, y as isize + dy);
            if px < 1 || py < 1 || px >= w as isize - 1 || py >= h as isize - 1 {
                continue;
            }
            let (px, py) = (px as usize, py as usize);
            let d2 = dx * dx + dy * dy;
            if d2 > REACH * REACH || !vskel[py * w + px] || crossing_number(vskel, w, px, py) != 1 {
                continue;
            }
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some(((px, py), d2));
            }
        }
    }
    let ((px, py), _) = best?;
    let t = trace_from(vskel, w, h, (px, py), None, len);
    if t.end == (px, py) {
        return None;
    }
    Some((t.end.1 as f64 - py as f64).atan2(t.end.0 as f64 - px as f64))
}

/// Direction into the fork: the opposite of the branch that diverges most
/// from the other two.
fn bifurcation_direction(skel: &[bool], w: usize, h: usize, x: usize, y: usize, len: usize) -> f64 {
    let p = neighbours(skel, w, x, y);
    let mut starts: Vec<(usize, usize)> = Vec::new();
    // One start per run of set neighbours, preferring 4-neighbours.
    let mut k0 = 0;
    while k0 < 8 && p[k0] {
        k0 += 1;
    }
    if k0 == 8 {
        return 0.0;
    }
    let mut k = 0;
    while k < 8 {
        let idx = (k0 + k) % 8;
        if p[idx] {
            let mut run = vec![idx];
            let mut j = k + 1;
            while j < 8 && p[(k0 + j) % 8] {
                run.push((k0 + j) % 8);
                j += 1;
            }
            let pick = run.iter().copied().find(|i| i % 2 == 0).unwrap_or(run[0]);
            let (dx, dy) = OFFSETS[pick];
            starts.push(((x as isize + dx) as usize, (y as isize + dy) as usize));
            k = j;
        } else {
            k += 1;
        }
    }
    let dirs: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let t = trace_from(skel, w, h, (x, y), Some(s), len);
            (t.end.1 as f64 - y as f64).atan2(t.end.0 as f64 - x as f64)
        })
        .collect();
    if dirs.len() < 3 {
        return dirs.first().copied().unwrap_or(0.0);
    }
    let mut stem = 0;
    let mut best = f64::INFINITY;
    for i in 0..dirs.len() {
        let s: f64 = (0..dirs.len()).filter(|&j| j != i).map(|j| (dirs[i] - dirs[j]).cos()).sum();
        if s < best {
            best = s;
            stem = i;
        }
    }
    dirs[stem] + PI
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn black(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0; 3]; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }
}

pub const DEFAULT_DOT_RADIUS: f64 = 2.0;
pub const DEFAULT_TAIL_LEN: f64 = 10.0;

/// Renders a template as dots with orientation tails: bifurcations in red,
/// terminations in green, blue always zero. A pixel claimed by one channel
/// is never written by the other.
pub fn render_template(t: &Template, dot_radius: f64, tail_len: f64) -> RgbImage {
    let mut img = RgbImage::black(t.width, t.height);
    for m in t.minutiae() {
        let channel = match m.kind {
            MinutiaKind::Bifurcation => 0,
            MinutiaKind::Termination => 1,
        };
        let mut paint = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= t.width as isize || y >= t.height as isize {
                return;
            }
            let px = &mut img.data[y as usize * t.width + x as usize];
            if px[1 - channel] == 0 {
                px[channel] = 255;
            }
        };
        let r = dot_radius.max(0.0);
        let ri = r.ceil() as isize;
        let (cx, cy) = (m.x.round() as isize, m.y.round() as isize);
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    paint(cx + dx, cy + dy);
                }
            }
        }
        let steps = (tail_len.max(0.0) * 2.0).ceil() as usize;
        let (s, c) = m.angle.sin_cos();
        for k in 0..=steps {
            let d = if steps == 0 { 0.0 } else { tail_len * k as f64 / steps as f64 };
            paint((m.x + c * d).round() as isize, (m.y + s * d).round() as isize);
        }
    }
    img
}

/// Simulated re-scan: rotation about the centre, a random crop window
/// covering `1 - crop_frac` of the area (outside re-padded with
/// background), then Gaussian sensor noise. Output is canonical-size.
pub fn perturb_impression(
    img: &GrayImage,
    rot_deg: f64,
    crop_frac: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<GrayImage> {
    if !(rot_deg.abs() <= 15.0) {
        return Err(invalid(alloc::format!("rotation {rot_deg} exceeds 15 degrees")));
    }
    if !(0.0..=0.2).contains(&crop_frac) {
        return Err(invalid(alloc::format!("crop fraction {crop_frac} outside [0, 0.2]")));
    }
    if !(noise_sd >= 0.0) {
        return Err(invalid("noise must be non-negative"));
    }
    let base = imaging::to_canonical(img)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = if rot_deg == 0.0 { base } else { imaging::rotate(&base, rot_deg, BACKGROUND) };
    let (w, h) = (out.width(), out.height());
    if crop_frac > 0.0 {
        let side = (1.0 - crop_frac).sqrt();
        let cw = ((w as f64 * side).round() as usize).max(1);
        let ch = ((h as f64 * side).round() as usize).max(1);
        let ox = rng.random_range(0..=w - cw);
        let oy = rng.random_range(0..=h - ch);
        for y in 0..h {
            for x in 0..w {
                if x < ox || y < oy || x >= ox + cw || y >= oy + ch {
                    out.set(x, y, BACKGROUND);
                }
            }
        }
    }
    if noise_sd > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let n: f64 = rng.sample(StandardNormal);
                let v = out.get(x, y) as f64 + noise_sd * n;
                out.set(x, y, clamp_u8(v));
            }
        }
    }
    debug_assert_eq!(out.width(), CANONICAL_SIDE);
    Ok(out)
}

/// Orientation field as used by the extractor (exposed for diagnostics).
pub fn ridge_field(img: &GrayImage) -> Result<OrientationField> {
    estimate_orientation(img, imaging::DEFAULT_BLOCK)
}

#[allow(dead_code)]
pub(crate) fn wrap_orientation(a: f64) -> f64 {
    wrap_pi(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parallel ridges along 0° with exactly one ridge ending at (100, 100);
    /// the ending ridge extends to the left of the point.
    fn single_ending() -> GrayImage {
        let f = 1.0 / 9.0;
        GrayImage::from_fn(256, 256, |x, y| {
            let (dx, dy) = (x as f64 - 100.0, y as f64 - 100.0);
            let psi = 2.0 * PI * f * dy + PI + dy.atan2(-dx);
            // Fade to background near the frame so only the ending is a feature.
            let r = (x.min(255 - x).min(y).min(255 - y)) as f64;
            let fade = ((r - 8.0) / 8.0).clamp(0.0, 1.0);
            clamp_u8(255.0 - fade * (127.0 - 110.0 * psi.cos()))
        })
        .unwrap()
    }

    #[test]
    fn blank_image_is_low_quality() {
        let blank = GrayImage::filled(256, 256, 255).unwrap();
        match extract(&blank) {
            Err(Error::LowQuality { found, partial, .. }) => {
                assert_eq!(found, 0);
                assert_eq!(partial.unwrap().len(), 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn finds_the_constructed_ridge_ending() {
        let t = extract_lenient(&single_ending()).unwrap();
        let near: Vec<&Minutia> =
            t.minutiae().iter().filter(|m| (m.x - 100.0).hypot(m.y - 100.0) < 20.0).collect();
        assert_eq!(near.len(), 1, "{:?}", t.minutiae());
        let m = near[0];
        assert_eq!(m.kind, MinutiaKind::Termination);
        assert!((m.x - 100.0).hypot(m.y - 100.0) <= 4.0, "{m:?}");
        assert!(angle_diff(m.angle, PI).abs() < crate::geom::rad(15.0), "{m:?}");
        let terminations = t.minutiae().iter().filter(|m| m.kind == MinutiaKind::Termination).count();
        assert_eq!(terminations, 1, "{:?}", t.minutiae());
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = single_ending();
        assert_eq!(extract_lenient(&img).unwrap(), extract_lenient(&img).unwrap());
    }

    fn tmpl(ms: &[(f64, f64, f64, MinutiaKind)]) -> Template {
        Template::new(
            256,
            256,
            500,
            ms.iter().map(|&(x, y, angle, kind)| Minutia { x, y, angle, kind, quality: 1.0 }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn render_empty_is_black() {
        let img = render_template(&Template::empty(64, 64), 2.0, 10.0);
        assert!(img.data.iter().all(|p| *p == [0, 0, 0]));
    }

    #[test]
    fn render_single_termination() {
        let t = tmpl(&[(128.0, 128.0, 0.0, MinutiaKind::Termination)]);
        let img = render_template(&t, 2.0, 10.0);
        assert_eq!(img.get(128, 128), [0, 255, 0]);
        for x in 128..=138 {
            assert_eq!(img.get(x, 128), [0, 255, 0]);
        }
        assert_eq!(img.get(140, 128), [0, 0, 0]);
        assert!(img.data.iter().all(|p| p[0] == 0 && p[2] == 0));
    }

    #[test]
    fn render_channels_never_overlap() {
        let t = tmpl(&[
            (50.0, 50.0, 0.0, MinutiaKind::Termination),
            (54.0, 50.0, PI, MinutiaKind::Bifurcation),
            (80.0, 90.0, 1.0, MinutiaKind::Bifurcation),
        ]);
        let img = render_template(&t, 2.0, 10.0);
        assert_eq!(img.data.iter().filter(|p| p[0] > 0 && p[1] > 0).count(), 0);
        let nonzero = img.data.iter().filter(|p| **p != [0, 0, 0]).count();
        assert!(nonzero >= 3);
    }

    #[test]
    fn perturb_identity_at_zero_parameters() {
        let img = single_ending();
        assert_eq!(perturb_impression(&img, 0.0, 0.0, 0.0, 7).unwrap(), img);
    }

    #[test]
    fn perturb_rejects_out_of_range() {
        let img = single_ending();
        assert!(perturb_impression(&img, 16.0, 0.0, 0.0, 1).is_err());
        assert!(perturb_impression(&img, 0.0, 0.3, 0.0, 1).is_err());
    }

    #[test]
    fn perturb_depends_on_seed() {
        let img = single_ending();
        let a = perturb_impression(&img, 7.0, 0.11, 5.0, 1).unwrap();
        let b = perturb_impression(&img, 7.0, 0.11, 5.0, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, perturb_impression(&img, 7.0, 0.11, 5.0, 1).unwrap());
    }

    #[test]
    fn rigid_move_and_mirror_keep_bounds() {
        let t = tmpl(&[(10.0, 10.0, 0.5, MinutiaKind::Termination), (128.0, 128.0, 1.0, MinutiaKind::Bifurcation)]);
        let moved = t.rigid_moved(0.3, 40.0, 0.0);
        assert!(moved.minutiae().iter().all(|m| m.x < 256.0 && m.y < 256.0 && m.x >= 0.0));
        let back = t.mirrored().mirrored();
        for (a, b) in back.minutiae().iter().zip(t.minutiae()) {
            assert!((a.x - b.x).abs() < 1e-9 && angle_diff(a.angle, b.angle).abs() < 1e-9);
        }
    }
}
