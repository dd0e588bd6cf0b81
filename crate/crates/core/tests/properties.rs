use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cswc::codebook::{build_dictionary, PatchSampling};
use cswc::evaluation::{purity, synth_representations, LabeledOutcome};
use cswc::graph::{build_graph, Edge, GraphParams, SimilarityGraph};
use cswc::imaging::{GrayImage, HOG_ORIENTATIONS};
use cswc::representation::ImageRepresentation;
use cswc::sampler::clusters::{sample_cps, select_uniform};
use cswc::sampler::{Mode, Sampler, SamplerConfig};

fn config(mode: Mode, beta: f64, max_iters: usize) -> SamplerConfig {
    SamplerConfig {
        mode,
        beta,
        max_iters,
        log_every: None,
        ..SamplerConfig::default()
    }
}

fn instance() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 3usize..14, 4usize..20, 0.0f64..40.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_keeps_every_invariant((seed, n, dim, beta) in instance(), cswc in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reps: Vec<ImageRepresentation<f64>> = (0..n)
            .map(|i| ImageRepresentation::new(format!("i{i}"), (0..dim).map(|_| rng.random_range(0.0..0.9)).collect()))
            .collect();
        let graph = build_graph(&reps, &GraphParams { max_neighbors: 3, ..GraphParams::default() }).unwrap();
        let mode = if cswc { Mode::Cswc } else { Mode::Swc };
        let mut sampler = Sampler::new(&graph, &reps, config(mode, beta, 0)).unwrap();
        for it in 1..=150 {
            let step = sampler.step(&mut rng);
            prop_assert!((0.0..=1.0).contains(&step.alpha));
            if step.identity {
                prop_assert_eq!(step.alpha, 1.0);
            }
            let p = sampler.partition();
            prop_assert!(p.is_valid());
            prop_assert_eq!(p.labels(), sampler.labels());
            if it % 25 == 0 {
                let r = sampler.recompute_energy();
                prop_assert!((sampler.energy() - r).abs() <= 1e-8 * r.abs().max(1.0));
            }
            let cps = sample_cps(&graph, sampler.labels(), &mut rng);
            for cp in &cps.cps {
                prop_assert!(cp.vertices.iter().all(|v| sampler.labels()[*v] == cp.label));
            }
        }
    }

    #[test]
    fn best_energy_never_increases((seed, n, dim, beta) in instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reps: Vec<ImageRepresentation<f64>> = (0..n)
            .map(|i| ImageRepresentation::new(format!("i{i}"), (0..dim).map(|_| rng.random_range(0.0..0.9)).collect()))
            .collect();
        let graph = build_graph(&reps, &GraphParams::default()).unwrap();
        let out = Sampler::new(&graph, &reps, config(Mode::Cswc, beta, 100)).unwrap().run(&mut rng).unwrap();
        prop_assert!(out.trace.windows(2).all(|w| w[1].best_energy <= w[0].best_energy));
        prop_assert!(out.trace.iter().all(|t| t.best_energy >= out.best.energy));
        prop_assert!(out.best.partition.is_valid());
    }
}

#[test]
fn cluster_selection_is_uniform() {
    // Chi-square with 4 degrees of freedom; 13.28 is the 0.99 quantile.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = [0f64; 5];
    let draws = 10_000;
    for _ in 0..draws {
        counts[select_uniform(5, 1, &mut rng)[0]] += 1.0;
    }
    let expected = draws as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    assert!(chi2 < 13.28, "chi-square {chi2}, counts {counts:?}");

    // Pairs out of 5: 10 equally likely subsets; 21.67 is the 0.99 quantile for 9 df.
    let mut pairs = std::collections::HashMap::new();
    for _ in 0..draws {
        *pairs.entry(select_uniform(5, 2, &mut rng)).or_insert(0f64) += 1.0;
    }
    assert_eq!(pairs.len(), 10);
    let expected = draws as f64 / 10.0;
    let chi2: f64 = pairs.values().map(|c| (c - expected).powi(2) / expected).sum();
    assert!(chi2 < 21.67, "chi-square {chi2}");
}

#[test]
fn two_blobs_are_recovered() {
    let mut exact = 0;
    for seed in 0..10u64 {
        let (reps, truth) = synth_representations::<f64>(2, 10, 36, 12, 0.02, 200 + seed).unwrap();
        let mut edges = Vec::new();
        for s in 0..20 {
            for t in s + 1..20 {
                let q = if truth[s] == truth[t] { 0.99 } else { 0.01 };
                edges.push(Edge { s, t, q });
            }
        }
        let graph = SimilarityGraph::from_edges(20, edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = Sampler::new(&graph, &reps, config(Mode::Cswc, 5.0, 1000))
            .unwrap()
            .run(&mut rng)
            .unwrap();
        let outcome = LabeledOutcome::new(truth, out.best.partition.labels().to_vec()).unwrap();
        if out.best.k() == 2 && purity(&outcome) == 1.0 {
            exact += 1;
        }
    }
    assert!(exact >= 9, "{exact}/10 exact recoveries");
}

#[test]
fn itw_words_separate_edges_from_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images: Vec<GrayImage<f64>> = (0..8)
        .map(|i| {
            GrayImage::from_fn(64, 64, |x, _| {
                if i % 2 == 0 {
                    // Vertical stripes: gradients are horizontal, split between bins 0 and 7.
                    (if (x / 5) % 2 == 0 { 210.0 } else { 40.0 }) + rng.random_range(-2.0..2.0f64)
                } else {
                    120.0 + rng.random_range(-6.0..6.0f64)
                }
            })
        })
        .collect();
    let sampling = PatchSampling {
        per_image: 80,
        ..PatchSampling::default()
    };
    let build = build_dictionary(&images, &sampling, 4, 4, 1, 100, 1e-8).unwrap();
    // Share of each ITW centroid's mass in its dominant pair of adjacent
    // orientation bins (0 and 7 are adjacent), pooled over cells.
    let peakedness: Vec<f64> = build
        .dictionary
        .words()
        .filter(|w| w.kind == cswc::codebook::WordKind::Itw)
        .map(|w| {
            let mut bins = [0f64; HOG_ORIENTATIONS];
            for (i, v) in w.centroid.iter().enumerate() {
                bins[i % HOG_ORIENTATIONS] += *v;
            }
            let total: f64 = bins.iter().sum();
            (0..HOG_ORIENTATIONS)
                .map(|b| bins[b] + bins[(b + 1) % HOG_ORIENTATIONS])
                .fold(0.0, f64::max)
                / total
        })
        .collect();
    let max = peakedness.iter().cloned().fold(0.0, f64::max);
    let min = peakedness.iter().cloned().fold(1.0, f64::min);
    assert!(max > 0.85, "edge word peakedness {max}");
    assert!(min < 0.5, "noise word peakedness {min}");
}
