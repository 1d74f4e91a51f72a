use proptest::prelude::*;
use proxyprints_core::geom::{angle_diff, rad};
use proxyprints_core::matcher::{cluster_size, match_templates, MatcherConfig};
use proxyprints_core::minutiae::{Minutia, MinutiaKind, Template};
use proxyprints_core::synth::{seeded_embedding, Synthesizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn minutia(x: f64, y: f64, angle: f64, bifurcation: bool) -> Minutia {
    let kind = if bifurcation { MinutiaKind::Bifurcation } else { MinutiaKind::Termination };
    Minutia { x, y, angle, kind, quality: 1.0 }
}

fn arb_minutiae(max: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<Minutia>> {
    prop::collection::vec((lo..hi, lo..hi, 0.0..std::f64::consts::TAU, any::<bool>()), 2..=max)
        .prop_map(|v| v.into_iter().map(|(x, y, a, b)| minutia(x, y, a, b)).collect())
}

fn template(m: Vec<Minutia>) -> Template {
    Template::new(256, 256, 500, m).unwrap()
}

/// Exhaustive oracle: the largest injective correspondence whose members
/// agree pairwise on segment length and on both directions relative to the
/// segment.
fn brute_force(a: &[Minutia], b: &[Minutia], cfg: &MatcherConfig) -> usize {
    let seg = |m: &[Minutia], p: usize, q: usize| {
        let (dx, dy) = (m[q].x - m[p].x, m[q].y - m[p].y);
        (dx.hypot(dy), dy.atan2(dx))
    };
    let ok = |(i, k): (usize, usize), (j, l): (usize, usize)| {
        let ((da, pa), (db, pb)) = (seg(a, i, j), seg(b, k, l));
        (da - db).abs() <= cfg.dist_tol
            && angle_diff(a[i].angle - pa, b[k].angle - pb).abs() <= cfg.angle_tol
            && angle_diff(a[j].angle - pa, b[l].angle - pb).abs() <= cfg.angle_tol
    };
    let mut best = 0;
    // Every partial injection a -> b, as a b-index (or none) per a-minutia.
    let mut assign = vec![usize::MAX; a.len()];
    fn walk(i: usize, assign: &mut Vec<usize>, nb: usize, best: &mut usize, ok: &dyn Fn((usize, usize), (usize, usize)) -> bool) {
        if i == assign.len() {
            let chosen: Vec<(usize, usize)> = assign.iter().enumerate().filter(|p| *p.1 != usize::MAX).map(|(i, &k)| (i, k)).collect();
            if chosen.iter().enumerate().all(|(x, &p)| chosen[x + 1..].iter().all(|&q| ok(p, q))) {
                *best = (*best).max(chosen.len());
            }
            return;
        }
        walk(i + 1, assign, nb, best, ok);
        for k in 0..nb {
            if !assign[..i].contains(&k) {
                assign[i] = k;
                walk(i + 1, assign, nb, best, ok);
                assign[i] = usize::MAX;
            }
        }
    }
    walk(0, &mut assign, b.len(), &mut best, &ok);
    best.max(1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cluster_size_matches_exhaustive_search(a in arb_minutiae(6, 90.0, 160.0), b in arb_minutiae(6, 90.0, 160.0)) {
        let cfg = MatcherConfig::default();
        prop_assert_eq!(cluster_size(&template(a.clone()), &template(b.clone()), &cfg).unwrap(), brute_force(&a, &b, &cfg));
    }

    #[test]
    fn oracle_agrees_on_moved_subsets(a in arb_minutiae(6, 90.0, 160.0), angle in -0.6f64..0.6, keep in 2usize..=6) {
        let cfg = MatcherConfig::default();
        let moved = template(a.clone()).rigid_moved(angle, 5.0, -4.0);
        let b: Vec<Minutia> = moved.minutiae().iter().take(keep).copied().collect();
        let got = cluster_size(&template(a.clone()), &template(b.clone()), &cfg).unwrap();
        prop_assert_eq!(got, brute_force(&a, &b, &cfg));
        prop_assert_eq!(got, keep.min(a.len()));
    }

    #[test]
    fn score_is_bounded_and_symmetric(a in arb_minutiae(24, 20.0, 236.0), b in arb_minutiae(24, 20.0, 236.0)) {
        let (ta, tb) = (template(a), template(b));
        let ab = match_templates(&ta, &tb).unwrap().value();
        let ba = match_templates(&tb, &ta).unwrap().value();
        prop_assert!(ab.abs_diff(ba) <= 5);
        prop_assert!(ab <= 3 * ta.len().min(tb.len()) as u32);
    }

    #[test]
    fn self_match_is_maximal(a in arb_minutiae(24, 20.0, 236.0), b in arb_minutiae(24, 20.0, 236.0)) {
        let (ta, tb) = (template(a), template(b));
        prop_assert_eq!(match_templates(&ta, &ta).unwrap().value(), 3 * ta.len() as u32);
        prop_assert!(match_templates(&ta, &ta).unwrap() >= match_templates(&ta, &tb).unwrap());
    }
}

fn synth_templates(count: u64) -> Vec<Template> {
    let synth = Synthesizer::new(512, Default::default()).unwrap();
    (0..count).map(|s| synth.seeded_template(&seeded_embedding(500 + s, 512)).unwrap()).collect()
}

#[test]
fn forty_minutia_self_match_reaches_one_hundred() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = Vec::new();
    while m.len() < 40 {
        let c = minutia(rng.random_range(10.0..246.0), rng.random_range(10.0..246.0), rng.random_range(0.0..6.28), rng.random_bool(0.5));
        if m.iter().all(|o: &Minutia| (o.x - c.x).hypot(o.y - c.y) >= 6.0) {
            m.push(c);
        }
    }
    let t = template(m);
    assert!(match_templates(&t, &t).unwrap().value() >= 100);
}

#[test]
fn disjoint_constellations_rarely_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random = |rng: &mut ChaCha8Rng| template((0..20).map(|_| minutia(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0), rng.random_range(0.0..6.28), rng.random_bool(0.5))).collect());
    let low = (0..1000).filter(|_| {
        let (a, b) = (random(&mut rng), random(&mut rng));
        match_templates(&a, &b).unwrap().value() < 40
    }).count();
    assert!(low >= 990, "{low}/1000 impostor pairs below 40");
}

#[test]
fn rigid_motion_keeps_synthetic_templates_matching() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let templates = synth_templates(50);
    let kept = templates
        .iter()
        .filter(|t| {
            let moved = t.rigid_moved(rad(rng.random_range(-30.0..=30.0)), rng.random_range(-40.0..=40.0), rng.random_range(-40.0..=40.0));
            match_templates(t, &moved).unwrap().value() > 40
        })
        .count();
    assert!(kept >= 48, "{kept}/50");
    let t = &templates[0];
    assert!(match_templates(t, &t.rigid_moved(rad(10.0), 12.0, -7.0)).unwrap().value() > 40);
}

#[test]
fn symmetry_on_synthetic_corpus() {
    let templates = synth_templates(30);
    for a in &templates[..10] {
        for b in &templates[10..] {
            let (ab, ba) = (match_templates(a, b).unwrap().value(), match_templates(b, a).unwrap().value());
            assert!(ab.abs_diff(ba) <= 5, "{ab} vs {ba}");
        }
    }
}
