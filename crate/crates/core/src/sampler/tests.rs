use super::*;
use crate::graph::Edge;
use crate::model::pursue_from_members;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn five_vertex_instance() -> (SimilarityGraph<f64>, Vec<ImageRepresentation<f64>>) {
    let edges = [
        (0, 1, 0.8),
        (1, 2, 0.35),
        (2, 3, 0.6),
        (3, 4, 0.9),
        (0, 4, 0.2),
        (1, 3, 0.45),
        (0, 2, 0.7),
    ];
    let g = SimilarityGraph::from_edges(5, edges.iter().map(|&(s, t, q)| Edge { s, t, q })).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let reps = (0..5)
        .map(|i| {
            let r: Vec<f64> = (0..12)
                .map(|j| {
                    if (j + i) % 3 == 0 {
                        rng.random_range(0.5..0.9)
                    } else {
                        rng.random_range(0.0..0.3)
                    }
                })
                .collect();
            ImageRepresentation::new(format!("v{i}"), r)
        })
        .collect();
    (g, reps)
}

fn config(mode: Mode, beta: f64, labels: Vec<usize>) -> SamplerConfig {
    SamplerConfig {
        mode,
        beta,
        init: Init::Labels { labels },
        log_every: None,
        ..SamplerConfig::default()
    }
}

/// Energy from the labelling alone, with fresh pursuit per category.
fn oracle_energy(
    labels: &[usize],
    reps: &[ImageRepresentation<f64>],
    bg: &BackgroundModel<f64>,
    beta: f64,
) -> (f64, usize) {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut loglik = 0.0;
    for l in &distinct {
        let rows: Vec<&[f64]> = (0..labels.len())
            .filter(|v| labels[*v] == *l)
            .map(|v| reps[v].responses.as_slice())
            .collect();
        let model = pursue_from_members(&rows, bg, DEFAULT_MAX_FEATURES);
        for r in &rows {
            loglik += log_phi(&model, r);
        }
    }
    (beta * distinct.len() as f64 - loglik, distinct.len())
}

/// Acceptance probability written out over the raw edge list.
fn oracle_alpha(
    g: &SimilarityGraph<f64>,
    reps: &[ImageRepresentation<f64>],
    bg: &BackgroundModel<f64>,
    beta: f64,
    labels_a: &[usize],
    proposal: &Proposal,
) -> f64 {
    let mut labels_b = labels_a.to_vec();
    for (set, l) in proposal.sets.iter().zip(&proposal.labels) {
        for v in set {
            labels_b[*v] = *l;
        }
    }
    let (mut cut_a, mut cut_b) = (1.0, 1.0);
    for set in &proposal.sets {
        for e in g.edges() {
            let (s_in, t_in) = (set.contains(&e.s), set.contains(&e.t));
            if s_in != t_in {
                if labels_a[e.s] == labels_a[e.t] {
                    cut_a *= 1.0 - e.q;
                }
                if labels_b[e.s] == labels_b[e.t] {
                    cut_b *= 1.0 - e.q;
                }
            }
        }
    }
    let (e_a, k_a) = oracle_energy(labels_a, reps, bg, beta);
    let (e_b, k_b) = oracle_energy(&labels_b, reps, bg, beta);
    let label_ratio = ((k_a as f64 + 1.0) / (k_b as f64 + 1.0)).powi(proposal.sets.len() as i32);
    (cut_b / cut_a * label_ratio * (e_a - e_b).exp()).min(1.0)
}

#[test]
fn acceptance_matches_independent_evaluation() {
    let (g, reps) = five_vertex_instance();
    let bg = background_expectations(&reps).unwrap();
    let labels_a = vec![0, 0, 1, 1, 2];
    let sampler = Sampler::new(&g, &reps, config(Mode::Cswc, 2.0, labels_a.clone())).unwrap();
    let cases = [
        Proposal {
            sets: vec![vec![2]],
            labels: vec![0],
        },
        Proposal {
            sets: vec![vec![4]],
            labels: vec![1],
        },
        Proposal {
            sets: vec![vec![0, 1]],
            labels: vec![3],
        },
        Proposal {
            sets: vec![vec![2, 3], vec![4]],
            labels: vec![0, 0],
        },
        Proposal {
            sets: vec![vec![1], vec![3]],
            labels: vec![3, 3],
        },
        Proposal {
            sets: vec![vec![0], vec![2], vec![4]],
            labels: vec![1, 2, 3],
        },
    ];
    for p in &cases {
        let eval = sampler.evaluate(p);
        let expected = oracle_alpha(&g, &reps, &bg, 2.0, &labels_a, p);
        assert!(
            (eval.alpha() - expected).abs() < 1e-10,
            "{p:?}: {} vs {expected}",
            eval.alpha()
        );
    }
}

#[test]
fn identity_proposal_is_always_accepted() {
    let (g, reps) = five_vertex_instance();
    let sampler = Sampler::new(&g, &reps, config(Mode::Swc, 300.0, vec![0, 0, 1, 1, 2])).unwrap();
    let eval = sampler.evaluate(&Proposal {
        sets: vec![vec![2, 3]],
        labels: vec![1],
    });
    assert!(eval.identity);
    assert_eq!(eval.alpha(), 1.0);
    assert_eq!(eval.energy_b, sampler.energy());
}

#[test]
fn applied_moves_keep_bookkeeping_exact() {
    let (g, reps) = five_vertex_instance();
    for mode in [Mode::Swc, Mode::Cswc] {
        let mut s = Sampler::new(&g, &reps, config(mode, 0.5, vec![0; 5])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let p = s.propose(&mut rng);
            let eval = s.evaluate(&p);
            let expected_energy = eval.energy_b;
            let expected_k = eval.k_b;
            s.apply(&p, eval);
            assert!((s.energy() - expected_energy).abs() < 1e-9);
            assert_eq!(s.k(), expected_k);
            assert!((s.energy() - s.recompute_energy()).abs() < 1e-9);
            assert!(s.partition().is_valid());
            let sol = s.solution();
            assert!((energy(&sol.partition, &sol.models, &reps, 0.5) - s.energy()).abs() < 1e-9);
        }
    }
}

#[test]
fn labels_compact_in_old_order_with_fresh_last() {
    let (g, reps) = five_vertex_instance();
    let mut s = Sampler::new(&g, &reps, config(Mode::Cswc, 1.0, vec![0, 0, 1, 1, 2])).unwrap();
    // Empty category 1 and open a fresh one.
    let p = Proposal {
        sets: vec![vec![2, 3], vec![0]],
        labels: vec![2, 3],
    };
    let eval = s.evaluate(&p);
    s.apply(&p, eval);
    assert_eq!(s.labels(), &[2, 0, 1, 1, 1]);
    assert_eq!(s.k(), 3);
}

#[test]
fn run_checks_energy_and_tracks_best() {
    let (g, reps) = five_vertex_instance();
    let cfg = SamplerConfig {
        max_iters: 400,
        beta: 1.0,
        check_energy_every: Some(100),
        log_every: None,
        ..SamplerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let out = run(&g, &reps, cfg, &mut rng).unwrap();
    assert_eq!(out.trace.len(), 401);
    let min = out.trace.iter().map(|t| t.energy).fold(f64::INFINITY, f64::min);
    assert!((out.best.energy - min).abs() < 1e-12);
    assert!(out.trace.windows(2).all(|w| w[1].best_energy <= w[0].best_energy));
    assert!((energy(&out.best.partition, &out.best.models, &reps, 1.0) - out.best.energy).abs() < 1e-9);
}

#[test]
fn zero_iterations_return_the_initial_state() {
    let (g, reps) = five_vertex_instance();
    let cfg = SamplerConfig {
        max_iters: 0,
        log_every: None,
        ..SamplerConfig::default()
    };
    let out = run(&g, &reps, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.best.k(), 5);
    assert_eq!(out.trace.len(), 1);
}

#[test]
fn plateau_stops_early() {
    let (g, reps) = five_vertex_instance();
    let cfg = SamplerConfig {
        max_iters: 10_000,
        plateau: Some(50),
        log_every: None,
        ..SamplerConfig::default()
    };
    let out = run(&g, &reps, cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(out.trace.len() < 10_001);
}

#[test]
fn invalid_configs_are_rejected() {
    let (g, reps) = five_vertex_instance();
    let bad = [
        SamplerConfig {
            beta: -1.0,
            ..SamplerConfig::default()
        },
        SamplerConfig {
            n_select_min: 0,
            ..SamplerConfig::default()
        },
        SamplerConfig {
            n_select_min: 3,
            n_select_max: 2,
            ..SamplerConfig::default()
        },
        SamplerConfig {
            init: Init::Labels { labels: vec![0; 4] },
            ..SamplerConfig::default()
        },
        SamplerConfig {
            init: Init::Components { min_q: 0.0 },
            ..SamplerConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(Sampler::new(&g, &reps, cfg), Err(Error::Config(_))));
    }
    assert!(Sampler::new(&g, &reps[..4], SamplerConfig::default()).is_err());
}

#[test]
fn component_warm_start() {
    let (g, reps) = five_vertex_instance();
    let cfg = SamplerConfig {
        init: Init::Components { min_q: 0.75 },
        ..SamplerConfig::default()
    };
    let s = Sampler::new(&g, &reps, cfg).unwrap();
    // Edges at or above 0.75: 0-1 and 3-4.
    assert_eq!(s.labels(), &[0, 0, 1, 2, 2]);
}
