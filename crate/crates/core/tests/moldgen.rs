use proptest::prelude::*;
use proxyprints_core::imaging::GrayImage;
use proxyprints_core::moldgen::{heightfield_to_mold, image_to_heightfield, stl_bytes, TriangleMesh, DEFAULT_PITCH_MM};
use proxyprints_core::synth::{seeded_embedding, Synthesizer};

/// Triangles read back from binary STL: (normal, three vertices).
fn parse_stl(bytes: &[u8]) -> Vec<([f32; 3], [[f32; 3]; 3])> {
    let f = |at: usize| f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    assert_eq!(bytes.len(), 84 + 50 * count);
    (0..count)
        .map(|t| {
            let r = 84 + 50 * t;
            assert_eq!(&bytes[r + 48..r + 50], &[0, 0]);
            let v = |k: usize| [f(r + 12 * k), f(r + 12 * k + 4), f(r + 12 * k + 8)];
            (v(0), [v(1), v(2), v(3)])
        })
        .collect()
}

fn sorted_vertices(it: impl Iterator<Item = [f32; 3]>) -> Vec<[u32; 3]> {
    let mut v: Vec<[u32; 3]> = it.map(|p| p.map(f32::to_bits)).collect();
    v.sort();
    v
}

#[test]
fn stl_round_trips_through_an_independent_reader() {
    for mesh in [TriangleMesh::cuboid(1.0, 2.0, 3.0), small_mold(&checker(64, 5))] {
        let parsed = parse_stl(&stl_bytes(&mesh));
        assert_eq!(parsed.len(), mesh.triangles.len());
        let written = sorted_vertices(parsed.iter().flat_map(|(_, v)| v.iter().copied()));
        let expected =
            sorted_vertices(mesh.triangles.iter().flat_map(|t| t.iter().map(|&i| mesh.vertices[i as usize].map(|c| c as f32))));
        assert_eq!(written, expected);
        for (n, _) in &parsed {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-5);
        }
    }
    assert_eq!(stl_bytes(&TriangleMesh::cuboid(1.0, 1.0, 1.0)).len(), 684);
}

fn checker(side: usize, cell: usize) -> GrayImage {
    GrayImage::from_fn(side, side, |x, y| if (x / cell + y / cell) % 2 == 0 { 0 } else { 255 }).unwrap()
}

fn small_mold(img: &GrayImage) -> TriangleMesh {
    heightfield_to_mold(&image_to_heightfield(img, 0.15, DEFAULT_PITCH_MM).unwrap(), 1.0, 2.0, 2.0).unwrap()
}

#[test]
fn ridges_sit_below_the_background() {
    let img = Synthesizer::new(512, Default::default()).unwrap().decode(&seeded_embedding(1800, 512)).unwrap();
    let hf = image_to_heightfield(&img, 0.2, DEFAULT_PITCH_MM).unwrap();
    for y in 0..img.height() {
        for x in 0..img.width() {
            for (dx, dy) in [(1, 0), (0, 1)] {
                let (x2, y2) = (x + dx, y + dy);
                if x2 < img.width() && y2 < img.height() && img.get(x, y) < img.get(x2, y2) {
                    assert!(hf.at(x, y) < hf.at(x2, y2));
                }
            }
        }
    }
    let (fw, fh) = hf.footprint_mm();
    assert!((fw - 256.0 * DEFAULT_PITCH_MM).abs() <= 1e-6 && (fh - 256.0 * DEFAULT_PITCH_MM).abs() <= 1e-6);
    assert!((hf.relief_range() - 0.2).abs() <= 1e-6);
}

#[test]
fn mold_outline_follows_footprint_and_border() {
    let img = checker(80, 7);
    let hf = image_to_heightfield(&img, 0.15, 0.1).unwrap();
    let mesh = heightfield_to_mold(&hf, 1.5, 3.0, 2.0).unwrap();
    let max = |c: usize| mesh.vertices.iter().map(|v| v[c]).fold(f64::MIN, f64::max);
    let min = |c: usize| mesh.vertices.iter().map(|v| v[c]).fold(f64::MAX, f64::min);
    assert!((max(0) - min(0) - (8.0 + 6.0)).abs() <= 1e-6);
    assert!((max(1) - min(1) - (8.0 + 6.0)).abs() <= 1e-6);
    assert!((max(2) - (2.0 + 0.15 + 1.5)).abs() <= 1e-9 && min(2) == 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_mold_is_watertight_and_outward(w in 64usize..90, h in 64usize..90, seed in any::<u64>(), depth in 0.10f64..=0.30) {
        let mut state = seed;
        let img = GrayImage::from_fn(w, h, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 56) as u8
        })
        .unwrap();
        let hf = image_to_heightfield(&img, depth, DEFAULT_PITCH_MM).unwrap();
        let mesh = heightfield_to_mold(&hf, 1.0, 2.0, 2.0).unwrap();
        prop_assert!(mesh.edge_degrees().values().all(|&d| d == 2));
        prop_assert!(mesh.validate().is_ok());
        prop_assert!(mesh.vertices.iter().flatten().all(|c| c.is_finite()));
        prop_assert!(mesh.signed_volume() > 0.0);
        prop_assert_eq!(mesh.euler_characteristic(), 2);
        prop_assert!(mesh.triangles.len() >= 2 * (w - 1) * (h - 1));
    }
}
