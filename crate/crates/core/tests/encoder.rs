use proptest::prelude::*;
use proxyprints_core::encoder::{Encoder, EncoderConfig, Embedding};
use proxyprints_core::geom::rad;
use proxyprints_core::imaging::flip_horizontal;
use proxyprints_core::minutiae::{extract_lenient, Minutia, MinutiaKind, Template};
use proxyprints_core::synth::{generate_identity, seeded_embedding, Synthesizer};

fn arb_template() -> impl Strategy<Value = Template> {
    prop::collection::vec((0.0f64..256.0, 0.0f64..256.0, 0.0..std::f64::consts::TAU, any::<bool>(), 0.0f64..=1.0), 8..80).prop_map(|v| {
        let m = v
            .into_iter()
            .map(|(x, y, angle, b, quality)| Minutia {
                x,
                y,
                angle,
                kind: if b { MinutiaKind::Bifurcation } else { MinutiaKind::Termination },
                quality,
            })
            .collect();
        Template::new(256, 256, 500, m).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embeddings_have_unit_norm(t in arb_template()) {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let e = enc.encode(&t).unwrap();
        prop_assert!((e.norm() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(e, enc.encode(&t).unwrap());
    }
}

#[test]
fn rotated_templates_stay_within_five_degrees() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let synth = Synthesizer::new(512, Default::default()).unwrap();
    for k in 0..20u64 {
        let t = synth.seeded_template(&seeded_embedding(1300 + k, 512)).unwrap();
        let moved = t.rigid_moved(rad(-25.0 + 2.5 * k as f64), 6.0, -9.0);
        let a = enc.encode(&t).unwrap().angle_to(&enc.encode(&moved).unwrap());
        assert!(a < rad(5.0), "seed {k}: {:.2} deg", a.to_degrees());
    }
}

/// Triplet form of the stability contract: for an identity pair, the
/// widest intra-identity angle of either identity stays below the closest
/// cross-identity angle minus the separation margin.
#[test]
fn intra_identity_spread_stays_below_inter_identity_distance() {
    let cfg = EncoderConfig::default();
    let enc = Encoder::new(cfg.clone()).unwrap();
    let ids: Vec<Vec<Embedding>> = (0..100u64)
        .map(|s| generate_identity(1400 + s, 5).unwrap().impressions.iter().map(|i| enc.encode(&extract_lenient(i).unwrap()).unwrap()).collect())
        .collect();
    let spread: Vec<f64> = ids
        .iter()
        .map(|es| {
            let mut w = 0.0f64;
            for i in 0..es.len() {
                for j in i + 1..es.len() {
                    w = w.max(es[i].angle_to(&es[j]));
                }
            }
            w
        })
        .collect();
    let (mut pairs, mut separated) = (0, 0);
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let closest = ids[a].iter().flat_map(|x| ids[b].iter().map(move |y| x.angle_to(y))).fold(f64::MAX, f64::min);
            pairs += 1;
            separated += (spread[a].max(spread[b]) < closest - cfg.separation_margin) as usize;
        }
    }
    assert!(separated as f64 >= 0.95 * pairs as f64, "{separated}/{pairs} identity pairs separated");
}

#[test]
fn mirrored_prints_land_away_from_their_originals() {
    let cfg = EncoderConfig::default();
    let enc = Encoder::new(cfg.clone()).unwrap();
    let synth = Synthesizer::new(512, Default::default()).unwrap();
    for k in 0..20u64 {
        let img = synth.decode(&seeded_embedding(1500 + k, 512)).unwrap();
        let a = enc.encode(&extract_lenient(&img).unwrap()).unwrap();
        let b = enc.encode(&extract_lenient(&flip_horizontal(&img)).unwrap()).unwrap();
        assert!(a.angle_to(&b) >= cfg.separation_margin, "seed {k}: {:.2} deg", a.angle_to(&b).to_degrees());
    }
}
