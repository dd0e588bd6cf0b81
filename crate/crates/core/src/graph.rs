//! Sparse image-similarity graph with per-edge turn-on probabilities.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::representation::ImageRepresentation;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams<S> {
    pub tau: S,
    pub max_neighbors: usize,
    /// Additive smoothing applied before normalizing responses into distributions.
    pub smoothing: S,
}

impl<S: Scalar> Default for GraphParams<S> {
    fn default() -> Self {
        Self {
            tau: S::lit(0.2),
            max_neighbors: 6,
            smoothing: S::lit(1e-6),
        }
    }
}

/// `(r + eps) / sum(r + eps)`.
pub fn to_distribution<S: Scalar>(responses: &[S], smoothing: S) -> Vec<S> {
    let total: S = responses.iter().map(|r| *r + smoothing).sum();
    responses.iter().map(|r| (*r + smoothing) / total).collect()
}

/// `KL(p||q) + KL(q||p)` evaluated as `sum (p - q)(ln p - ln q)`.
pub fn symmetric_kl<S: Scalar>(p: &[S], log_p: &[S], q: &[S], log_q: &[S]) -> S {
    p.iter()
        .zip(log_p)
        .zip(q.iter().zip(log_q))
        .map(|((a, la), (b, lb))| (*a - *b) * (*la - *lb))
        .sum()
}

#[inline]
fn turn_on<S: Scalar>(divergence: S, tau: S) -> S {
    (-tau * divergence.max(S::zero())).exp().max(S::min_positive_value())
}

/// `exp(-tau * D)` with `D` the symmetric KL between the smoothed, normalized responses.
pub fn edge_probability<S: Scalar>(
    a: &ImageRepresentation<S>,
    b: &ImageRepresentation<S>,
    tau: S,
    smoothing: S,
) -> Result<S> {
    if a.dim() != b.dim() {
        return Err(Error::Config(format!(
            "representations {} and {} differ in length ({} vs {})",
            a.id,
            b.id,
            a.dim(),
            b.dim()
        )));
    }
    if tau.is_nan() || tau <= S::zero() {
        return Err(Error::Config(format!("tau {tau} must be positive")));
    }
    let p = to_distribution(&a.responses, smoothing);
    let q = to_distribution(&b.responses, smoothing);
    let lp: Vec<S> = p.iter().map(|v| v.ln()).collect();
    let lq: Vec<S> = q.iter().map(|v| v.ln()).collect();
    Ok(turn_on(symmetric_kl(&p, &lp, &q, &lq), tau))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<S> {
    pub s: usize,
    pub t: usize,
    pub q: S,
}

/// Undirected graph, edges stored once with `s < t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph<S> {
    n: usize,
    edges: Vec<Edge<S>>,
    /// Per vertex: `(neighbor, edge index)` sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl<S: Scalar> SimilarityGraph<S> {
    /// Validates and indexes an explicit edge list. Endpoints may come in either order.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = Edge<S>>) -> Result<Self> {
        let mut edges: Vec<Edge<S>> = edges
            .into_iter()
            .map(|e| if e.s > e.t { Edge { s: e.t, t: e.s, q: e.q } } else { e })
            .collect();
        edges.sort_by_key(|e| (e.s, e.t));
        for w in edges.windows(2) {
            if (w[0].s, w[0].t) == (w[1].s, w[1].t) {
                return Err(Error::Config(format!("duplicate edge ({}, {})", w[0].s, w[0].t)));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            if e.s == e.t {
                return Err(Error::Config(format!("self-loop at vertex {}", e.s)));
            }
            if e.t >= n {
                return Err(Error::Config(format!("edge ({}, {}) outside {n} vertices", e.s, e.t)));
            }
            if !(e.q > S::zero() && e.q <= S::one()) {
                return Err(Error::Config(format!(
                    "edge ({}, {}) has q = {} outside (0, 1]",
                    e.s, e.t, e.q
                )));
            }
            adjacency[e.s].push((e.t, i));
            adjacency[e.t].push((e.s, i));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { n, edges, adjacency })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge<S>] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// Text edge list, one `s t q` line per edge with q to 6 decimals.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            writeln!(out, "{} {} {:.6}", e.s, e.t, e.q.as_f64()).unwrap();
        }
        out
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

const ROW_TILE: usize = 16;
const COL_TILE: usize = 64;

/// All-pairs turn-on probabilities, sparsified to the union of each vertex's top
/// `max_neighbors` edges. Ties at the cutoff go to the lower vertex index.
pub fn build_graph<S: Scalar>(reps: &[ImageRepresentation<S>], params: &GraphParams<S>) -> Result<SimilarityGraph<S>> {
    let n = reps.len();
    if n < 2 {
        return Err(Error::Config(format!("graph needs at least 2 images, got {n}")));
    }
    if params.max_neighbors == 0 {
        return Err(Error::Config("max_neighbors must be at least 1".into()));
    }
    if params.tau.is_nan() || params.tau <= S::zero() {
        return Err(Error::Config(format!("tau {} must be positive", params.tau)));
    }
    let dim = reps[0].dim();
    if let Some(bad) = reps.iter().find(|r| r.dim() != dim) {
        return Err(Error::Config(format!(
            "representation {} has {} components, expected {dim}",
            bad.id,
            bad.dim()
        )));
    }

    let dists: Vec<Vec<S>> = reps
        .par_iter()
        .map(|r| to_distribution(&r.responses, params.smoothing))
        .collect();
    let logs: Vec<Vec<S>> = dists.par_iter().map(|p| p.iter().map(|v| v.ln()).collect()).collect();

    let k = params.max_neighbors.min(n - 1);
    let tops: Vec<Vec<(usize, S)>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(ROW_TILE)
        .flat_map_iter(|rows| {
            let mut q = vec![vec![S::zero(); n]; rows.len()];
            for col0 in (0..n).step_by(COL_TILE) {
                for t in col0..(col0 + COL_TILE).min(n) {
                    for (slot, &s) in rows.iter().enumerate() {
                        if s != t {
                            let d = symmetric_kl(&dists[s], &logs[s], &dists[t], &logs[t]);
                            q[slot][t] = turn_on(d, params.tau);
                        }
                    }
                }
            }
            rows.iter()
                .zip(q)
                .map(|(&s, row)| {
                    let mut cand: Vec<(usize, S)> = row.into_iter().enumerate().filter(|(t, _)| *t != s).collect();
                    cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                    cand.truncate(k);
                    cand
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut edges: Vec<Edge<S>> = tops
        .iter()
        .enumerate()
        .flat_map(|(s, top)| {
            top.iter().map(move |&(t, q)| Edge {
                s: s.min(t),
                t: s.max(t),
                q,
            })
        })
        .collect();
    edges.sort_by_key(|e| (e.s, e.t));
    edges.dedup_by_key(|e| (e.s, e.t));
    SimilarityGraph::from_edges(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rep(v: Vec<f64>) -> ImageRepresentation<f64> {
        ImageRepresentation::new("x", v)
    }

    #[test]
    fn identical_representations_have_q_one() {
        let a = rep(vec![0.1, 0.5, 0.0, 0.9]);
        assert_eq!(edge_probability(&a, &a, 0.2, 1e-6).unwrap(), 1.0);
        let zero = rep(vec![0.0; 4]);
        assert_eq!(edge_probability(&zero, &zero, 0.2, 1e-6).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_indicators_match_direct_summation() {
        let (eps, tau) = (1e-6f64, 0.2f64);
        let a = rep(vec![1.0, 0.0]);
        let b = rep(vec![0.0, 1.0]);
        // Direct two-term evaluation of KL(p||q) + KL(q||p).
        let hi = (1.0 + eps) / (1.0 + 2.0 * eps);
        let lo = eps / (1.0 + 2.0 * eps);
        let kl_pq = hi * (hi / lo).ln() + lo * (lo / hi).ln();
        let kl_qp = lo * (lo / hi).ln() + hi * (hi / lo).ln();
        let expected = (-tau * (kl_pq + kl_qp)).exp();
        let got = edge_probability(&a, &b, tau, eps).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn edge_probability_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = rep((0..30).map(|_| rng.random::<f64>()).collect());
            let b = rep((0..30).map(|_| rng.random::<f64>()).collect());
            let (x, y) = (
                edge_probability(&a, &b, 0.2, 1e-6).unwrap(),
                edge_probability(&b, &a, 0.2, 1e-6).unwrap(),
            );
            assert_eq!(x, y);
            assert!(x > 0.0 && x <= 1.0);
        }
    }

    #[test]
    fn edge_probability_rejects_mismatch() {
        assert!(edge_probability(&rep(vec![0.0]), &rep(vec![0.0, 1.0]), 0.2, 1e-6).is_err());
    }

    #[test]
    fn three_vertices_form_a_triangle() {
        let reps = vec![rep(vec![0.1, 0.2]), rep(vec![0.3, 0.1]), rep(vec![0.9, 0.5])];
        let g = build_graph(&reps, &GraphParams::default()).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.s, e.t)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    fn random_reps(n: usize, dim: usize, seed: u64) -> Vec<ImageRepresentation<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| ImageRepresentation::new(format!("v{i}"), (0..dim).map(|_| rng.random::<f64>().powi(3)).collect()))
            .collect()
    }

    #[test]
    fn retained_edges_match_all_pairs_oracle() {
        let reps = random_reps(20, 12, 3);
        let params = GraphParams {
            max_neighbors: 3,
            ..GraphParams::default()
        };
        let g = build_graph(&reps, &params).unwrap();
        let n = reps.len();
        let q = |s: usize, t: usize| edge_probability(&reps[s], &reps[t], params.tau, params.smoothing).unwrap();
        // Brute force: t is in s's top-k iff fewer than k others beat it
        // (higher q, or equal q with lower index).
        let in_top = |s: usize, t: usize| {
            let qt = q(s, t);
            let better = (0..n)
                .filter(|&u| u != s && u != t)
                .filter(|&u| q(s, u) > qt || (q(s, u) == qt && u < t))
                .count();
            better < params.max_neighbors
        };
        let mut expected = Vec::new();
        for s in 0..n {
            for t in s + 1..n {
                if in_top(s, t) || in_top(t, s) {
                    expected.push((s, t, q(s, t)));
                }
            }
        }
        let got: Vec<(usize, usize, f64)> = g.edges().iter().map(|e| (e.s, e.t, e.q)).collect();
        assert_eq!(got, expected);
        for v in 0..n {
            assert!(g.degree(v) >= params.max_neighbors);
        }
    }

    #[test]
    fn duplicated_vertex_keeps_its_unit_edge() {
        let mut reps = random_reps(15, 8, 5);
        reps.push(reps[4].clone());
        let g = build_graph(&reps, &GraphParams::default()).unwrap();
        let e = g
            .edges()
            .iter()
            .find(|e| (e.s, e.t) == (4, 15))
            .expect("duplicate edge retained");
        assert_eq!(e.q, 1.0);
    }

    #[test]
    fn retention_is_order_independent() {
        let reps = random_reps(25, 10, 9);
        let perm: Vec<usize> = (0..25).map(|i| (i * 7) % 25).collect();
        let shuffled: Vec<_> = perm.iter().map(|&i| reps[i].clone()).collect();
        let a = build_graph(&reps, &GraphParams::default()).unwrap();
        let b = build_graph(&shuffled, &GraphParams::default()).unwrap();
        let mut mapped: Vec<(usize, usize)> = b
            .edges()
            .iter()
            .map(|e| (perm[e.s].min(perm[e.t]), perm[e.s].max(perm[e.t])))
            .collect();
        mapped.sort_unstable();
        let orig: Vec<(usize, usize)> = a.edges().iter().map(|e| (e.s, e.t)).collect();
        assert_eq!(mapped, orig);
    }

    #[test]
    fn from_edges_validates() {
        assert!(SimilarityGraph::from_edges(3, [Edge { s: 1, t: 1, q: 0.5f64 }]).is_err());
        assert!(SimilarityGraph::from_edges(3, [Edge { s: 0, t: 1, q: 0.0f64 }]).is_err());
        assert!(SimilarityGraph::from_edges(3, [Edge { s: 0, t: 1, q: 0.5f64 }, Edge { s: 1, t: 0, q: 0.4 }]).is_err());
        let g = SimilarityGraph::from_edges(3, [Edge { s: 2, t: 0, q: 0.25f64 }]).unwrap();
        assert_eq!(g.to_edge_list(), "0 2 0.250000\n");
    }
}
