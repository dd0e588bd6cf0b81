//! Connected components of sampled "on" edges, the CP-graph built over them,
//! and the combinatorial clusters drawn from the CP-graph.

use rand::seq::index;
use rand::Rng;

use crate::graph::SimilarityGraph;
use crate::scalar::Scalar;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }

    /// Component index per element, numbered by smallest member; and the component count.
    pub fn components(&mut self) -> (Vec<usize>, usize) {
        let n = self.parent.len();
        let mut index_of_root = vec![usize::MAX; n];
        let mut count = 0;
        let out = (0..n)
            .map(|v| {
                let r = self.find(v);
                if index_of_root[r] == usize::MAX {
                    index_of_root[r] = count;
                    count += 1;
                }
                index_of_root[r]
            })
            .collect();
        (out, count)
    }
}

fn group(component_of: &[usize], count: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); count];
    for (v, c) in component_of.iter().enumerate() {
        groups[*c].push(v);
    }
    groups
}

/// A set of same-labelled vertices joined by "on" edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectedComponent {
    /// Sorted vertex ids.
    pub vertices: Vec<usize>,
    pub label: usize,
}

/// Result of one round of edge sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpSample {
    pub cps: Vec<ConnectedComponent>,
    /// CP index of every vertex.
    pub cp_of: Vec<usize>,
}

/// Turns each same-label edge on with probability `q_e`; cross-label edges stay off.
pub fn sample_cps<S: Scalar, R: Rng + ?Sized>(graph: &SimilarityGraph<S>, labels: &[usize], rng: &mut R) -> CpSample {
    let mut uf = UnionFind::new(graph.n_vertices());
    for e in graph.edges() {
        if labels[e.s] == labels[e.t] && rng.random::<f64>() < e.q.as_f64() {
            uf.union(e.s, e.t);
        }
    }
    let (cp_of, count) = uf.components();
    let cps = group(&cp_of, count)
        .into_iter()
        .map(|vertices| ConnectedComponent {
            label: labels[vertices[0]],
            vertices,
        })
        .collect();
    CpSample { cps, cp_of }
}

/// Graph over CPs; an edge joins two CPs that are adjacent in the image graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CpGraph<S> {
    pub n_cps: usize,
    /// `(a, b, q_cp)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize, S)>,
}

/// `q_cp = 1 - prod (1 - q_e)` over every image-graph edge between two CPs,
/// whatever the labels of its endpoints, kept strictly below 1.
pub fn build_cp_graph<S: Scalar>(graph: &SimilarityGraph<S>, cp_of: &[usize], n_cps: usize) -> CpGraph<S> {
    let mut crossing: Vec<(usize, usize, S)> = graph
        .edges()
        .iter()
        .filter_map(|e| {
            let (a, b) = (cp_of[e.s], cp_of[e.t]);
            (a != b).then(|| (a.min(b), a.max(b), (-e.q).ln_1p()))
        })
        .collect();
    crossing.sort_by_key(|c| (c.0, c.1));

    let mut edges: Vec<(usize, usize, S)> = Vec::new();
    for (a, b, log_off) in crossing {
        match edges.last_mut() {
            Some(last) if (last.0, last.1) == (a, b) => last.2 += log_off,
            _ => edges.push((a, b, log_off)),
        }
    }
    let below_one = S::one() - S::epsilon();
    for e in &mut edges {
        e.2 = (-e.2.exp_m1()).min(below_one);
    }
    CpGraph { n_cps, edges }
}

/// Turns CP-graph edges on with probability `q_cp`; returns every connected
/// group of CPs (as sorted CP indices).
pub fn combinatorial_clusters<S: Scalar, R: Rng + ?Sized>(cp_graph: &CpGraph<S>, rng: &mut R) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(cp_graph.n_cps);
    for (a, b, q) in &cp_graph.edges {
        if rng.random::<f64>() < q.as_f64() {
            uf.union(*a, *b);
        }
    }
    let (of, count) = uf.components();
    group(&of, count)
}

/// `n_select` distinct indices below `available`, uniformly at random
/// (all of them when fewer exist), in increasing order.
pub fn select_uniform<R: Rng + ?Sized>(available: usize, n_select: usize, rng: &mut R) -> Vec<usize> {
    let take = n_select.min(available);
    let mut picked = index::sample(rng, available, take).into_vec();
    picked.sort_unstable();
    picked
}

/// Draws combinatorial clusters and keeps `n_select` of them uniformly at random.
pub fn sample_combinatorial_clusters<S: Scalar, R: Rng + ?Sized>(
    cp_graph: &CpGraph<S>,
    rng: &mut R,
    n_select: usize,
) -> Vec<Vec<usize>> {
    let all = combinatorial_clusters(cp_graph, rng);
    select_uniform(all.len(), n_select, rng)
        .into_iter()
        .map(|i| all[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path_graph(n: usize, q: f64) -> SimilarityGraph<f64> {
        SimilarityGraph::from_edges(n, (0..n - 1).map(|i| Edge { s: i, t: i + 1, q })).unwrap()
    }

    #[test]
    fn certain_edges_give_graph_components() {
        // Two components: a path over 0..4 and an edge 5-6.
        let mut edges: Vec<Edge<f64>> = (0..4).map(|i| Edge { s: i, t: i + 1, q: 1.0 }).collect();
        edges.push(Edge { s: 5, t: 6, q: 1.0 });
        let g = SimilarityGraph::from_edges(7, edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_cps(&g, &[0; 7], &mut rng);
        let sets: Vec<Vec<usize>> = s.cps.iter().map(|c| c.vertices.clone()).collect();
        assert_eq!(sets, vec![vec![0, 1, 2, 3, 4], vec![5, 6]]);
    }

    #[test]
    fn vanishing_edges_give_singletons() {
        let g = path_graph(6, 1e-300);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_cps(&g, &[0; 6], &mut rng).cps.len(), 6);
    }

    #[test]
    fn cps_never_span_two_labels() {
        let g = path_graph(8, 0.9);
        let labels = [0, 0, 1, 1, 0, 1, 1, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = sample_cps(&g, &labels, &mut rng);
            for cp in &s.cps {
                assert!(cp.vertices.iter().all(|v| labels[*v] == cp.label));
            }
        }
    }

    #[test]
    fn cp_edge_probabilities() {
        let g = SimilarityGraph::from_edges(
            4,
            [
                Edge { s: 0, t: 1, q: 0.3f64 },
                Edge { s: 1, t: 2, q: 0.5 },
                Edge { s: 0, t: 3, q: 0.5 },
            ],
        )
        .unwrap();
        // CPs: {0}, {1}, {2, 3}.
        let cg = build_cp_graph(&g, &[0, 1, 2, 2], 3);
        assert_eq!(cg.edges.len(), 3);
        assert_eq!((cg.edges[0].0, cg.edges[0].1), (0, 1));
        assert!((cg.edges[0].2 - 0.3).abs() < 1e-15);
        assert!((cg.edges[1].2 - 0.5).abs() < 1e-15);
        // {1} to {2,3}: one edge.
        assert!((cg.edges[2].2 - 0.5).abs() < 1e-15);

        // Crossings of 0.3 and 0.5 combine to 1 - 0.7 * 0.5.
        let cg = build_cp_graph(&g, &[0, 1, 1, 1], 2);
        assert_eq!(cg.edges.len(), 1);
        assert!((cg.edges[0].2 - 0.65).abs() < 1e-15);

        // No crossing edges, no CP edge.
        let cg = build_cp_graph(&g, &[0, 0, 0, 0], 1);
        assert!(cg.edges.is_empty());
    }

    #[test]
    fn cluster_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let none = CpGraph {
            n_cps: 4,
            edges: vec![(0, 1, 0.0f64), (2, 3, 0.0)],
        };
        assert_eq!(
            combinatorial_clusters(&none, &mut rng),
            vec![vec![0], vec![1], vec![2], vec![3]]
        );
        let all = CpGraph {
            n_cps: 4,
            edges: vec![(0, 1, 1.0f64), (2, 3, 1.0)],
        };
        assert_eq!(combinatorial_clusters(&all, &mut rng), vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(sample_combinatorial_clusters(&all, &mut rng, 3).len(), 2);
    }
}
