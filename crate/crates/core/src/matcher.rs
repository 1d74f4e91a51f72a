//! Pair-table minutiae matcher.
//!
//! Each template is summarized by its intra-template pair table: for every
//! minutia pair the distance between them and the direction of each minutia
//! relative to the connecting segment. Those quantities do not change under
//! rotation or translation. A correspondence `(i, k)` maps minutia `i` of
//! `a` to minutia `k` of `b`; two correspondences are compatible when the
//! pair `(i, j)` in `a` looks like the pair `(k, l)` in `b`. The score is
//! three times the largest set of mutually compatible correspondences.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::{angle_diff, rad};
use crate::minutiae::Template;

pub const DEFAULT_THRESHOLD: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MatchScore(pub u32);

impl MatchScore {
    pub fn value(self) -> u32 {
        self.0
    }
}

impl core::fmt::Display for MatchScore {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Accept iff the score is strictly greater than the threshold.
pub fn decide(s: MatchScore, threshold: u32) -> Decision {
    if s.0 > threshold {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatcherConfig {
    pub dist_tol: f64,
    pub angle_tol: f64,
    pub scale: u32,
    /// Branch-and-bound node budget; the best clique found so far is
    /// returned if it is exhausted.
    pub node_budget: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { dist_tol: 8.0, angle_tol: rad(11.25), scale: 3, node_budget: 2_000_000 }
    }
}

pub fn match_templates(a: &Template, b: &Template) -> Result<MatchScore> {
    match_with(a, b, &MatcherConfig::default())
}

pub fn match_with(a: &Template, b: &Template, cfg: &MatcherConfig) -> Result<MatchScore> {
    let size = cluster_size(a, b, cfg)?;
    Ok(MatchScore(if size >= 2 { size as u32 * cfg.scale } else { 0 }))
}

#[derive(Clone, Copy, Debug)]
struct PairEntry {
    i: u16,
    j: u16,
    d: f64,
    bi: f64,
    bj: f64,
}

fn pair_table(t: &Template) -> Vec<PairEntry> {
    let m = t.minutiae();
    let mut out = Vec::with_capacity(m.len() * m.len().saturating_sub(1) / 2);
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let (dx, dy) = (m[j].x - m[i].x, m[j].y - m[i].y);
            let phi = dy.atan2(dx);
            out.push(PairEntry {
                i: i as u16,
                j: j as u16,
                d: dx.hypot(dy),
                bi: m[i].angle - phi,
                bj: m[j].angle - phi,
            });
        }
    }
    out
}

/// Size of the largest mutually compatible correspondence set.
pub fn cluster_size(a: &Template, b: &Template, cfg: &MatcherConfig) -> Result<usize> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("matching needs at least 2 minutiae per template"));
    }
    let nb = b.len();
    let pa = pair_table(a);
    let mut pb = pair_table(b);
    pb.sort_by(|x, y| x.d.total_cmp(&y.d));
    let node = |i: u16, k: u16| i as usize * nb + k as usize;

    let mut edges: Vec<(u32, u32)> = Vec::new();
    for p in &pa {
        let lo = pb.partition_point(|q| q.d < p.d - cfg.dist_tol);
        for q in &pb[lo..] {
            if q.d > p.d + cfg.dist_tol {
                break;
            }
            // i -> k, j -> l
            if angle_diff(p.bi, q.bi).abs() <= cfg.angle_tol && angle_diff(p.bj, q.bj).abs() <= cfg.angle_tol {
                edges.push((node(p.i, q.i) as u32, node(p.j, q.j) as u32));
            }
            // i -> l, j -> k: the segment runs the other way in b.
            if angle_diff(p.bi, q.bj + PI).abs() <= cfg.angle_tol
                && angle_diff(p.bj, q.bi + PI).abs() <= cfg.angle_tol
            {
                edges.push((node(p.i, q.j) as u32, node(p.j, q.i) as u32));
            }
        }
    }
    if edges.is_empty() {
        return Ok(1);
    }
    Ok(max_clique(&edges, cfg.node_budget).max(1))
}

/// Scores many pairs; results follow input order.
pub fn match_batch(pairs: &[(&Template, &Template)]) -> Vec<Result<MatchScore>> {
    pairs.iter().map(|(a, b)| match_templates(a, b)).collect()
}

#[derive(Clone)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn new(n: usize) -> Self {
        Self { words: vec![0; n.div_ceil(64)] }
    }
    #[inline]
    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }
    #[inline]
    fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }
    #[inline]
    fn has(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }
    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
    fn first(&self) -> Option<usize> {
        self.words.iter().enumerate().find(|(_, &w)| w != 0).map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
    fn and(&self, o: &BitSet) -> BitSet {
        BitSet { words: self.words.iter().zip(&o.words).map(|(a, b)| a & b).collect() }
    }
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Exact maximum clique (colour-bounded branch and bound) on a graph given
/// by its edge list over arbitrary node ids.
pub(crate) fn max_clique(edges: &[(u32, u32)], budget: u64) -> usize {
    // Compact the node ids that actually carry edges, ordered by id.
    let mut ids: Vec<u32> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    let index = |x: u32| ids.binary_search(&x).unwrap();
    let mut adj: Vec<BitSet> = (0..n).map(|_| BitSet::new(n)).collect();
    for &(u, v) in edges {
        let (a, b) = (index(u), index(v));
        if a != b {
            adj[a].set(b);
            adj[b].set(a);
        }
    }
    let degree: Vec<usize> = adj.iter().map(BitSet::count).collect();

    let lower = greedy_clique(&adj, &degree);
    // k-core pruning: a vertex of degree < lower cannot extend a larger clique.
    let mut alive = BitSet::new(n);
    let mut deg = degree.clone();
    for v in 0..n {
        alive.set(v);
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| deg[v] < lower).collect();
    while let Some(v) = stack.pop() {
        if !alive.has(v) {
            continue;
        }
        alive.clear(v);
        for u in adj[v].iter() {
            if alive.has(u) {
                deg[u] -= 1;
                if deg[u] + 1 == lower {
                    stack.push(u);
                }
            }
        }
    }
    if alive.is_empty() {
        return lower;
    }

    // Reorder survivors by non-increasing degree (ties by lower index).
    let mut order: Vec<usize> = alive.iter().collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    let m = order.len();
    let mut pos = vec![usize::MAX; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    let mut sub: Vec<BitSet> = (0..m).map(|_| BitSet::new(m)).collect();
    for (k, &v) in order.iter().enumerate() {
        for u in adj[v].iter() {
            if pos[u] != usize::MAX {
                sub[k].set(pos[u]);
            }
        }
    }
    let mut search = Search { adj: &sub, best: lower, nodes: 0, budget };
    let mut p = BitSet::new(m);
    for k in 0..m {
        p.set(k);
    }
    search.expand(0, p);
    search.best
}

fn greedy_clique(adj: &[BitSet], degree: &[usize]) -> usize {
    let n = adj.len();
    let mut best = if n > 0 { 1 } else { 0 };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));
    for &start in order.iter().take(32) {
        let mut cand = adj[start].clone();
        let mut size = 1;
        while !cand.is_empty() {
            let v = cand.iter().max_by(|&a, &b| degree[a].cmp(&degree[b]).then(b.cmp(&a))).unwrap();
            size += 1;
            cand = cand.and(&adj[v]);
        }
        best = best.max(size);
    }
    best
}

struct Search<'a> {
    adj: &'a [BitSet],
    best: usize,
    nodes: u64,
    budget: u64,
}

impl Search<'_> {
    fn expand(&mut self, depth: usize, mut p: BitSet) {
        self.nodes += 1;
        if self.nodes > self.budget {
            return;
        }
        let (verts, colors) = self.colour(&p);
        for k in (0..verts.len()).rev() {
            if depth + colors[k] <= self.best {
                return;
            }
            let v = verts[k];
            let np = p.and(&self.adj[v]);
            if np.is_empty() {
                if depth + 1 > self.best {
                    self.best = depth + 1;
                }
            } else {
                self.expand(depth + 1, np);
            }
            p.clear(v);
            if self.nodes > self.budget {
                return;
            }
        }
    }

    /// Greedy sequential colouring; returns vertices sorted by colour with
    /// their colour numbers (1-based), which bound the clique size.
    fn colour(&self, p: &BitSet) -> (Vec<usize>, Vec<usize>) {
        let mut verts = Vec::new();
        let mut colors = Vec::new();
        let mut uncoloured = p.clone();
        let mut c = 0;
        while !uncoloured.is_empty() {
            c += 1;
            let mut q = uncoloured.clone();
            while let Some(v) = q.first() {
                q.clear(v);
                for (qw, aw) in q.words.iter_mut().zip(&self.adj[v].words) {
                    *qw &= !aw;
                }
                uncoloured.clear(v);
                verts.push(v);
                colors.push(c);
            }
        }
        (verts, colors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minutiae::{Minutia, MinutiaKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_template(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Template {
        let mut ms: Vec<Minutia> = Vec::new();
        while ms.len() < n {
            let x = 128.0 + rng.random_range(-spread..spread);
            let y = 128.0 + rng.random_range(-spread..spread);
            if ms.iter().any(|m| (m.x - x).hypot(m.y - y) < 6.0) {
                continue;
            }
            ms.push(Minutia {
                x,
                y,
                angle: rng.random_range(0.0..core::f64::consts::TAU),
                kind: if rng.random_bool(0.5) { MinutiaKind::Termination } else { MinutiaKind::Bifurcation },
                quality: 1.0,
            });
        }
        Template::new(256, 256, 500, ms).unwrap()
    }

    #[test]
    fn decide_is_strict() {
        assert_eq!(decide(MatchScore(41), 40), Decision::Accept);
        assert_eq!(decide(MatchScore(40), 40), Decision::Reject);
        assert_eq!(decide(MatchScore(0), 40), Decision::Reject);
    }

    #[test]
    fn too_small_templates_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_template(&mut rng, 1, 50.0);
        let b = random_template(&mut rng, 10, 50.0);
        assert!(match_templates(&a, &b).is_err());
        assert!(match_templates(&b, &a).is_err());
    }

    #[test]
    fn self_match_scores_full_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_template(&mut rng, 40, 100.0);
        let s = match_templates(&t, &t).unwrap();
        assert_eq!(s.value(), 120);
    }

    #[test]
    fn rotated_copy_still_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_template(&mut rng, 40, 70.0);
        let moved = t.rigid_moved(rad(10.0), 12.0, -7.0);
        assert!(match_templates(&t, &moved).unwrap().value() > 40);
    }

    #[test]
    fn clique_on_known_graphs() {
        // Triangle plus a pendant edge.
        assert_eq!(max_clique(&[(0, 1), (1, 2), (0, 2), (2, 3)], 1 << 20), 3);
        // K5 embedded among sparse noise.
        let mut e = Vec::new();
        for a in 10..15u32 {
            for b in a + 1..15 {
                e.push((a, b));
            }
        }
        e.extend([(1, 2), (2, 3), (3, 4), (4, 10)]);
        assert_eq!(max_clique(&e, 1 << 20), 5);
    }
}
