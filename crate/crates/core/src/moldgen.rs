//! Negative-mold meshes for casting printed fingerprints.
//!
//! Ridges become valleys in the mold plate so that a cast film carries
//! raised ridges. Units are millimetres.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::imaging::GrayImage;

pub const DEFAULT_PITCH_MM: f64 = 0.0508;
pub const DEFAULT_DEPTH_MM: f64 = 0.15;
pub const MIN_DEPTH_MM: f64 = 0.10;
pub const MAX_DEPTH_MM: f64 = 0.30;
pub const DEFAULT_BORDER_MM: f64 = 2.0;
pub const DEFAULT_BASE_MM: f64 = 2.0;
/// Rim height above the highest relief point.
pub const DEFAULT_RIM_HEIGHT_MM: f64 = 1.0;

/// Relief heights above the deepest valley, row-major with row 0 at the
/// top of the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    width: usize,
    height: usize,
    pitch_mm: f64,
    heights: Vec<f64>,
}

impl HeightField {
    pub fn new(width: usize, height: usize, pitch_mm: f64, heights: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 || heights.len() != width * height {
            return Err(invalid("height field needs at least 2x2 samples matching its size"));
        }
        if !(pitch_mm.is_finite() && pitch_mm > 0.0) {
            return Err(invalid("pitch must be positive"));
        }
        if heights.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(invalid("heights must be finite and non-negative"));
        }
        Ok(Self { width, height, pitch_mm, heights })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.heights[y * self.width + x]
    }

    /// Relief footprint `(width, height)` in millimetres.
    pub fn footprint_mm(&self) -> (f64, f64) {
        (self.width as f64 * self.pitch_mm, self.height as f64 * self.pitch_mm)
    }

    pub fn relief_range(&self) -> f64 {
        let (lo, hi) = self.heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
        hi - lo
    }
}

/// Gray levels are stretched linearly so the darkest pixel sits
/// `ridge_depth_mm` below the lightest one, which is the plate surface.
pub fn image_to_heightfield(img: &GrayImage, ridge_depth_mm: f64, pitch_mm: f64) -> Result<HeightField> {
    if !(MIN_DEPTH_MM..=MAX_DEPTH_MM).contains(&ridge_depth_mm) {
        return Err(invalid(alloc::format!(
            "ridge depth {ridge_depth_mm} mm outside [{MIN_DEPTH_MM}, {MAX_DEPTH_MM}]"
        )));
    }
    let px = img.pixels();
    let lo = *px.iter().min().unwrap_or(&0);
    let hi = *px.iter().max().unwrap_or(&255);
    let heights = px
        .iter()
        .map(|&v| if hi == lo { ridge_depth_mm } else { ridge_depth_mm * f64::from(v - lo) / f64::from(hi - lo) })
        .collect();
    HeightField::new(img.width(), img.height(), pitch_mm, heights)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Axis-aligned box with one corner at the origin.
    pub fn cuboid(dx: f64, dy: f64, dz: f64) -> Self {
        let mut m = TriangleMesh::default();
        let b = [[0.0, 0.0], [dx, 0.0], [dx, dy], [0.0, dy]].map(|[x, y]| m.vertex(x, y, 0.0));
        let t = [[0.0, 0.0], [dx, 0.0], [dx, dy], [0.0, dy]].map(|[x, y]| m.vertex(x, y, dz));
        m.close_sides(&b, &t);
        m.tri(t[0], t[1], t[2]);
        m.tri(t[0], t[2], t[3]);
        m
    }

    fn vertex(&mut self, x: f64, y: f64, z: f64) -> u32 {
        self.vertices.push([x, y, z]);
        (self.vertices.len() - 1) as u32
    }

    fn tri(&mut self, a: u32, b: u32, c: u32) {
        self.triangles.push([a, b, c]);
    }

    /// Side walls and bottom between a counter-clockwise bottom rectangle
    /// and the rectangle above it; the top is left to the caller.
    fn close_sides(&mut self, bottom: &[u32; 4], top: &[u32; 4]) {
        for s in 0..4 {
            let n = (s + 1) % 4;
            self.tri(bottom[s], bottom[n], top[n]);
            self.tri(bottom[s], top[n], top[s]);
        }
        self.tri(bottom[0], bottom[2], bottom[1]);
        self.tri(bottom[0], bottom[3], bottom[2]);
    }

    pub fn normal(&self, t: [u32; 3]) -> [f64; 3] {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len == 0.0 {
            [0.0; 3]
        } else {
            [n[0] / len, n[1] / len, n[2] / len]
        }
    }

    /// Volume enclosed, positive when faces point outwards.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0]))
                    / 6.0
            })
            .sum()
    }

    /// Every undirected edge with its number of incident triangles.
    pub fn edge_degrees(&self) -> alloc::collections::BTreeMap<(u32, u32), usize> {
        let mut edges = alloc::collections::BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_degrees().len() as i64 + self.triangles.len() as i64
    }

    /// Watertight, consistently oriented, finite and free of degenerate faces.
    pub fn validate(&self) -> Result<()> {
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Degenerate("non-finite vertex".into()));
        }
        let mut directed = alloc::collections::BTreeSet::new();
        for t in &self.triangles {
            if t.iter().any(|&i| i as usize >= self.vertices.len()) {
                return Err(Error::Degenerate("triangle index out of range".into()));
            }
            if self.normal(*t) == [0.0; 3] {
                return Err(Error::Degenerate("zero-area triangle".into()));
            }
            for k in 0..3 {
                if !directed.insert((t[k], t[(k + 1) % 3])) {
                    return Err(Error::Degenerate("edge used twice in the same direction".into()));
                }
            }
        }
        if let Some((e, d)) = self.edge_degrees().into_iter().find(|&(_, d)| d != 2) {
            return Err(Error::Degenerate(alloc::format!("edge {e:?} has {d} faces")));
        }
        Ok(())
    }
}

/// Mold plate: a base slab carrying the relief, a half-pixel apron around
/// it and a raised rim to contain resin. The outer footprint is the relief
/// footprint plus the border on every side.
pub fn heightfield_to_mold(
    hf: &HeightField,
    border_height_mm: f64,
    border_width_mm: f64,
    base_thickness_mm: f64,
) -> Result<TriangleMesh> {
    for (name, v) in [("border height", border_height_mm), ("border width", border_width_mm), ("base thickness", base_thickness_mm)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(alloc::format!("{name} must be positive")));
        }
    }
    let (w, h, p) = (hf.width, hf.height, hf.pitch_mm);
    let (fw, fh) = hf.footprint_mm();
    let bw = border_width_mm;
    let (ow, oh) = (fw + 2.0 * bw, fh + 2.0 * bw);
    let top = base_thickness_mm + hf.heights.iter().cloned().fold(0.0, f64::max) + border_height_mm;
    let mut m = TriangleMesh::default();

    // Relief grid at pixel centres; image row 0 lands at the far edge so
    // the plate reads upright from above.
    let gx = |i: usize| bw + (i as f64 + 0.5) * p;
    let gy = |j: usize| bw + (h as f64 - j as f64 - 0.5) * p;
    let z = |(i, j): (usize, usize)| base_thickness_mm + hf.at(i, j);
    let grid: Vec<u32> =
        (0..h).flat_map(|j| (0..w).map(move |i| (i, j))).map(|(i, j)| m.vertex(gx(i), gy(j), z((i, j)))).collect();
    let g = |(i, j): (usize, usize)| grid[j * w + i];
    for j in 0..h - 1 {
        for i in 0..w - 1 {
            // Row j + 1 lies below row j in y.
            let (a, b, c, d) = (g((i, j + 1)), g((i + 1, j + 1)), g((i + 1, j)), g((i, j)));
            m.tri(a, b, c);
            m.tri(a, c, d);
        }
    }

    // Grid boundary, counter-clockwise from above: bottom edge rightwards,
    // right edge upwards, top edge leftwards, left edge downwards. Each
    // side ends on the pixel the next side starts from.
    let sides: [Vec<(usize, usize)>; 4] = [
        (0..w).map(|i| (i, h - 1)).collect(),
        (0..h).rev().map(|j| (w - 1, j)).collect(),
        (0..w).rev().map(|i| (i, 0)).collect(),
        (0..h).map(|j| (0, j)).collect(),
    ];
    let (x0, x1, y0, y1) = (bw, bw + fw, bw, bw + fh);
    let project = |s: usize, (i, j): (usize, usize)| match s {
        0 => (gx(i), y0),
        1 => (x1, gy(j)),
        2 => (gx(i), y1),
        _ => (x0, gy(j)),
    };
    let cavity_corners = [(x1, y0), (x1, y1), (x0, y1), (x0, y0)];
    let outer_corners = [(ow, 0.0), (ow, oh), (0.0, oh), (0.0, 0.0)];

    // Apron: every boundary sample projected onto the cavity wall at its
    // own height, plus the four cavity corners.
    let apron: Vec<Vec<u32>> = (0..4)
        .map(|s| sides[s].iter().map(|&px| { let (x, y) = project(s, px); m.vertex(x, y, z(px)) }).collect())
        .collect();
    let corner: Vec<u32> = (0..4)
        .map(|s| {
            let px = *sides[s].last().expect("sides are non-empty");
            m.vertex(cavity_corners[s].0, cavity_corners[s].1, z(px))
        })
        .collect();
    for s in 0..4 {
        let (pts, q) = (&sides[s], &apron[s]);
        for k in 0..pts.len() - 1 {
            m.tri(g(pts[k]), q[k], q[k + 1]);
            m.tri(g(pts[k]), q[k + 1], g(pts[k + 1]));
        }
        let pc = g(*pts.last().expect("non-empty"));
        m.tri(pc, *q.last().expect("non-empty"), corner[s]);
        m.tri(pc, corner[s], apron[(s + 1) % 4][0]);
    }

    // Cavity wall from the apron edge up to the rim top.
    let ring: Vec<u32> = (0..4).flat_map(|s| apron[s].iter().copied().chain([corner[s]])).collect();
    let lid: Vec<u32> = ring
        .iter()
        .map(|&v| {
            let [x, y, _] = m.vertices[v as usize];
            m.vertex(x, y, top)
        })
        .collect();
    for k in 0..ring.len() {
        let n = (k + 1) % ring.len();
        m.tri(ring[k], lid[k], lid[n]);
        m.tri(ring[k], lid[n], ring[n]);
    }

    // Rim top: per side, a fan from the outer corner where the side starts.
    let rim_top: Vec<u32> = outer_corners.iter().map(|&(x, y)| m.vertex(x, y, top)).collect();
    let mut offset = 0;
    for s in 0..4 {
        let len = apron[s].len() + 1;
        let prev_corner = lid[(offset + ring.len() - 1) % ring.len()];
        let inner: Vec<u32> = core::iter::once(prev_corner).chain(lid[offset..offset + len].iter().copied()).collect();
        let start = rim_top[(s + 3) % 4];
        for k in 0..inner.len() - 1 {
            m.tri(start, inner[k + 1], inner[k]);
        }
        m.tri(start, rim_top[s], *inner.last().expect("non-empty"));
        offset += len;
    }

    let bottom: Vec<u32> = outer_corners.iter().map(|&(x, y)| m.vertex(x, y, 0.0)).collect();
    let ccw = |v: &[u32]| [v[3], v[0], v[1], v[2]];
    m.close_sides(&ccw(&bottom), &ccw(&rim_top));
    Ok(m)
}

/// Binary STL: 80-byte header, triangle count, then per triangle the unit
/// normal, three vertices (all little-endian `f32`) and a zero attribute.
pub fn stl_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    let header = b"proxyprints mold, binary STL, millimetres";
    out[..header.len()].copy_from_slice(header);
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for &t in &mesh.triangles {
        let n = mesh.normal(t);
        for c in n {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        for i in t {
            for c in mesh.vertices[i as usize] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: usize, h: usize, v: f64) -> HeightField {
        HeightField::new(w, h, 0.5, vec![v; w * h]).unwrap()
    }

    #[test]
    fn cuboid_is_a_closed_box() {
        let b = TriangleMesh::cuboid(2.0, 3.0, 4.0);
        b.validate().unwrap();
        assert_eq!(b.triangles.len(), 12);
        assert_eq!(b.euler_characteristic(), 2);
        assert!((b.signed_volume() - 24.0).abs() < 1e-12);
        assert_eq!(stl_bytes(&b).len(), 684);
    }

    #[test]
    fn flat_mold_volume_and_topology() {
        let hf = flat(2, 2, 0.0);
        let m = heightfield_to_mold(&hf, 1.0, 3.0, 2.0).unwrap();
        m.validate().unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        let (ow, oh) = (1.0 + 6.0, 1.0 + 6.0);
        let expected = ow * oh * 2.0 + (ow * oh - 1.0) * 1.0;
        assert!((m.signed_volume() - expected).abs() < 1e-9 * expected, "{}", m.signed_volume());
    }

    #[test]
    fn relief_mold_is_watertight() {
        let heights = (0..35).map(|k| 0.15 * ((k * 7) % 5) as f64 / 4.0).collect();
        let hf = HeightField::new(7, 5, 0.0508, heights).unwrap();
        let m = heightfield_to_mold(&hf, 1.0, 2.0, 1.5).unwrap();
        m.validate().unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.signed_volume() > 0.0);
        assert_eq!(stl_bytes(&m).len(), 84 + 50 * m.triangles.len());
    }

    #[test]
    fn heightfield_mapping() {
        let white = GrayImage::filled(64, 64, 255).unwrap();
        let hf = image_to_heightfield(&white, 0.15, DEFAULT_PITCH_MM).unwrap();
        assert_eq!(hf.relief_range(), 0.0);

        let mut dot = GrayImage::filled(64, 64, 255).unwrap();
        dot.set(1, 2, 0);
        let hf = image_to_heightfield(&dot, 0.15, DEFAULT_PITCH_MM).unwrap();
        let below: Vec<f64> = hf.heights().iter().filter(|&&v| v < 0.15).cloned().collect();
        assert_eq!(below, vec![0.0]);
        assert_eq!(hf.at(1, 2), 0.0);
        assert!((hf.relief_range() - 0.15).abs() < 1e-12);

        assert!(image_to_heightfield(&dot, 0.05, DEFAULT_PITCH_MM).is_err());
        assert!(image_to_heightfield(&dot, 0.31, DEFAULT_PITCH_MM).is_err());
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        assert!(heightfield_to_mold(&flat(2, 2, 0.0), 0.0, 1.0, 1.0).is_err());
        assert!(HeightField::new(1, 3, 0.1, vec![0.0; 3]).is_err());
        assert!(HeightField::new(2, 2, 0.1, vec![-1.0; 4]).is_err());
    }
}
