//! Key-derived rotations of the embedding sphere.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::Embedding;
use crate::error::{Error, Result};

/// Seconds since the Unix epoch, UTC. Serialized as RFC 3339 text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn parse(s: &str) -> Result<Self> {
        chrono::DateTime::parse_from_rfc3339(s)
            .map(|t| Self(t.timestamp()))
            .map_err(|e| Error::InvalidArgument(alloc::format!("bad timestamp {s:?}: {e}")))
    }
}

impl core::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match chrono::DateTime::from_timestamp(self.0, 0) {
            Some(t) => write!(f, "{}", t.format("%Y-%m-%dT%H:%M:%SZ")),
            None => Err(core::fmt::Error),
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A deployment secret. `Debug` never shows the secret bytes and the type
/// is deliberately not serializable.
#[derive(Clone, PartialEq, Eq)]
pub struct AliasKey {
    secret: [u8; 32],
    pub key_id: String,
    pub created_at: Timestamp,
}

impl core::fmt::Debug for AliasKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("AliasKey")
            .field("key_id", &self.key_id)
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

impl AliasKey {
    pub fn new(secret: [u8; 32], key_id: impl Into<String>, created_at: Timestamp) -> Result<Self> {
        let key_id = key_id.into();
        if key_id.is_empty() || key_id.len() > 64 || !key_id.chars().all(|c| c.is_ascii_graphic()) {
            return Err(Error::Config(alloc::format!("invalid key id {key_id:?}")));
        }
        Ok(Self { secret, key_id, created_at })
    }

    pub fn secret(&self) -> &[u8; 32] {
        &self.secret
    }

    /// Key derived from a seed; for tests and reproducible demos only.
    pub fn from_seed(seed: u64, key_id: impl Into<String>) -> Self {
        let digest = Sha256::new().chain_update(b"proxyprints-demo-key").chain_update(seed.to_le_bytes()).finalize();
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&digest);
        Self::new(secret, key_id, Timestamp(0)).expect("valid demo key id")
    }
}

/// Orthogonal matrix with determinant +1, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation {
    n: usize,
    matrix: Vec<f64>,
}

pub const ORTHONORMAL_TOL: f64 = 1e-9;

impl Rotation {
    pub fn identity(n: usize) -> Self {
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self { n, matrix }
    }

    /// Wraps a matrix after checking orthonormality; no determinant check.
    pub fn from_matrix(n: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, actual: matrix.len() });
        }
        let r = Self { n, matrix };
        let drift = r.orthonormality_error();
        if drift > ORTHONORMAL_TOL {
            return Err(Error::Degenerate(alloc::format!("matrix is not orthonormal (drift {drift:e})")));
        }
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    /// `max |RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let dot: f64 = (0..n).map(|k| self.matrix[k * n + i] * self.matrix[k * n + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Haar-uniform rotation from a key: Gaussian matrix from a ChaCha20 stream
/// keyed by the secret, Householder QR with a positive triangular diagonal,
/// and one column flipped if the determinant came out negative.
pub fn derive_rotation(key: &AliasKey, n: usize) -> Result<Rotation> {
    if !(2..=4096).contains(&n) {
        return Err(Error::Config(alloc::format!("rotation dimension {n} outside [2, 4096]")));
    }
    let seed: [u8; 32] = Sha256::new()
        .chain_update(b"proxyprints-rotation/1")
        .chain_update(key.secret)
        .chain_update((n as u64).to_le_bytes())
        .finalize()
        .into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    // Column-major working copy: a[j] is column j.
    let mut a: Vec<Vec<f64>> = (0..n).map(|_| vec![0.0; n]).collect();
    for i in 0..n {
        for col in a.iter_mut() {
            col[i] = StandardNormal.sample(&mut rng);
        }
    }
    let (q, diag_signs, reflections) = householder_q(&mut a);
    let mut det_sign = if reflections % 2 == 0 { 1.0 } else { -1.0 };
    // Q ← Q · diag(sign(R_ii)) so that R has a positive diagonal.
    let mut m = vec![0.0; n * n];
    for j in 0..n {
        det_sign *= diag_signs[j];
        for i in 0..n {
            m[i * n + j] = q[j][i] * diag_signs[j];
        }
    }
    if det_sign < 0.0 {
        for i in 0..n {
            m[i * n + n - 1] = -m[i * n + n - 1];
        }
    }
    Rotation::from_matrix(n, m)
}

/// Householder QR of column-major `a` (overwritten). Returns the columns of
/// Q, the signs of R's diagonal, and the number of non-trivial reflections.
fn householder_q(a: &mut [Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let n = a.len();
    let mut vs: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut signs = vec![1.0; n];
    for k in 0..n {
        let norm: f64 = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || k == n - 1 {
            signs[k] = if a[k][k] < 0.0 { -1.0 } else { 1.0 };
            vs.push(None);
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            signs[k] = if a[k][k] < 0.0 { -1.0 } else { 1.0 };
            vs.push(None);
            continue;
        }
        for col in a.iter_mut().skip(k) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, x) in col[k..].iter_mut().zip(&v) {
                *c -= f * x;
            }
        }
        signs[k] = if alpha < 0.0 { -1.0 } else { 1.0 };
        vs.push(Some(v));
    }
    // Accumulate Q = H_0 H_1 ... H_{n-1} applied to the identity.
    let mut q: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            c
        })
        .collect();
    let mut reflections = 0;
    for k in (0..n).rev() {
        let Some(v) = &vs[k] else { continue };
        reflections += 1;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for col in q.iter_mut() {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, x) in col[k..].iter_mut().zip(v) {
                *c -= f * x;
            }
        }
    }
    (q, signs, reflections)
}

pub fn apply(r: &Rotation, e: &Embedding) -> Result<Embedding> {
    if e.dim() != r.n {
        return Err(Error::DimensionMismatch { expected: r.n, actual: e.dim() });
    }
    let v = e.values();
    let out = (0..r.n).map(|i| r.matrix[i * r.n..(i + 1) * r.n].iter().zip(v).map(|(a, b)| a * b).sum()).collect();
    Ok(Embedding::from_raw(out))
}

pub fn transpose(r: &Rotation) -> Rotation {
    let n = r.n;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[j * n + i] = r.matrix[i * n + j];
        }
    }
    Rotation { n, matrix: m }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_deterministic_and_orthonormal() {
        let key = AliasKey::new([0u8; 32], "zero", Timestamp(0)).unwrap();
        let a = derive_rotation(&key, 8).unwrap();
        assert_eq!(a, derive_rotation(&key, 8).unwrap());
        assert!(a.orthonormality_error() <= 1e-9);
    }

    #[test]
    fn transpose_inverts() {
        let r = derive_rotation(&AliasKey::from_seed(3, "k3"), 16).unwrap();
        let e = Embedding::normalized((0..16).map(|i| (i as f64).sin() + 0.1).collect()).unwrap();
        let back = apply(&transpose(&r), &apply(&r, &e).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(e.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_leaves_embeddings_alone() {
        let e = Embedding::normalized(vec![0.3, -0.4, 0.5, 0.1]).unwrap();
        assert_eq!(apply(&Rotation::identity(4), &e).unwrap().values(), e.values());
    }

    #[test]
    fn dimension_errors() {
        let r = Rotation::identity(4);
        assert!(matches!(apply(&r, &Embedding::from_raw(vec![1.0; 3])), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(derive_rotation(&AliasKey::from_seed(1, "a"), 1), Err(Error::Config(_))));
        assert!(AliasKey::new([0; 32], "", Timestamp(0)).is_err());
    }

    #[test]
    fn timestamps_round_trip_as_text() {
        let t = Timestamp(1_700_000_000);
        let s = alloc::format!("{t}");
        assert_eq!(s, "2023-11-14T22:13:20Z");
        assert_eq!(Timestamp::parse(&s).unwrap(), t);
        assert!(Timestamp::parse("yesterday").is_err());
    }

    #[test]
    fn debug_hides_secret() {
        let k = AliasKey::new([0xab; 32], "visible", Timestamp(5)).unwrap();
        let s = alloc::format!("{k:?}");
        assert!(s.contains("visible") && !s.contains("171") && !s.contains("ab"));
    }
}
