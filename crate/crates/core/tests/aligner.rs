use proptest::prelude::*;
use proxyprints_core::aligner::{apply, derive_rotation, transpose, AliasKey, Rotation, Timestamp};
use proxyprints_core::encoder::Embedding;
use proxyprints_core::pipeline::{AliasStore, PipelineConfig, Transformer};
use proxyprints_core::synth::generate_identity;

/// Determinant by Gaussian elimination with partial pivoting.
fn determinant(n: usize, mut a: Vec<f64>) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x * n + c].abs().total_cmp(&a[y * n + c].abs())).unwrap();
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            det = -det;
        }
        let pivot = a[c * n + c];
        det *= pivot;
        for r in c + 1..n {
            let f = a[r * n + c] / pivot;
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
        }
    }
    det
}

fn gram_error(r: &Rotation) -> f64 {
    let (n, m) = (r.dim(), r.matrix());
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..n).map(|l| m[l * n + i] * m[l * n + j]).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

fn key(secret: [u8; 32], id: &str) -> AliasKey {
    AliasKey::new(secret, id, Timestamp(0)).unwrap()
}

#[test]
fn all_zero_secret_gives_a_proper_rotation() {
    let r = derive_rotation(&key([0; 32], "zero"), 8).unwrap();
    assert!(gram_error(&r) <= 1e-9);
    assert!((determinant(8, r.matrix().to_vec()) - 1.0).abs() <= 1e-6);
    assert_eq!(r, derive_rotation(&key([0; 32], "zero"), 8).unwrap());
}

#[test]
fn distinct_keys_give_distant_rotations() {
    for k in 0..20u8 {
        let a = derive_rotation(&key([k; 32], "a"), 512).unwrap();
        let b = derive_rotation(&key([k.wrapping_add(100); 32], "b"), 512).unwrap();
        let frob: f64 = a.matrix().iter().zip(b.matrix()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(frob > 1.0, "pair {k}: {frob}");
    }
}

fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_preserves_norm_and_inverts(secret in any::<[u8; 32]>(), v in arb_vec(64)) {
        let r = derive_rotation(&key(secret, "p"), 64).unwrap();
        let e = Embedding::normalized(v).unwrap();
        let out = apply(&r, &e).unwrap();
        prop_assert!((out.norm() - 1.0).abs() <= 1e-9);
        let back = apply(&transpose(&r), &out).unwrap();
        for (x, y) in back.values().iter().zip(e.values()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn apply_is_linear(secret in any::<[u8; 32]>(), u in arb_vec(16), w in arb_vec(16), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let r = derive_rotation(&key(secret, "p"), 16).unwrap();
        let mix: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lhs = apply(&r, &Embedding::from_raw(mix)).unwrap();
        let (ru, rw) = (apply(&r, &Embedding::from_raw(u)).unwrap(), apply(&r, &Embedding::from_raw(w)).unwrap());
        for i in 0..16 {
            prop_assert!((lhs.values()[i] - (a * ru.values()[i] + b * rw.values()[i])).abs() <= 1e-9);
        }
    }

    #[test]
    fn rotations_are_orthonormal_with_unit_determinant(secret in any::<[u8; 32]>(), n in 2usize..40) {
        let r = derive_rotation(&key(secret, "p"), n).unwrap();
        prop_assert!(gram_error(&r) <= 1e-9);
        prop_assert!((determinant(n, r.matrix().to_vec()) - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn rotation_manifest_lists_every_user() {
    let (a, b) = (AliasKey::from_seed(1, "A"), AliasKey::from_seed(2, "B"));
    let tf = Transformer::new(&a, PipelineConfig::default()).unwrap();
    let mut store = AliasStore::new(PipelineConfig::default(), &a).unwrap();
    for s in 0..3u64 {
        let id = generate_identity(600 + s, 1).unwrap();
        store.enroll(&tf, &format!("u{s}"), &id.impressions[0], Timestamp(0), false).unwrap();
    }
    let m = store.rotate_key(&a, &b, Timestamp(10)).unwrap();
    assert_eq!(m.users, vec!["u0", "u1", "u2"]);
    assert!((0..3).all(|s| store.get(&format!("u{s}")).unwrap().stale));
    assert!(store.rotate_key(&AliasKey::from_seed(3, "C"), &AliasKey::from_seed(4, "D"), Timestamp(11)).is_err());
}
