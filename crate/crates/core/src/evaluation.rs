//! Agreement between an inferred partition and ground truth, plus the
//! synthetic representations used for desk-scale checks.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::representation::{ImageRepresentation, MAX_RESPONSE};
use crate::sampler::TraceRecord;
use crate::scalar::Scalar;

/// Ground truth `X` and prediction `Y` over the same `N` images. Label values
/// are arbitrary; the two label sets need not have the same size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledOutcome {
    truth: Vec<usize>,
    predicted: Vec<usize>,
}

impl LabeledOutcome {
    pub fn new(truth: Vec<usize>, predicted: Vec<usize>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Config(format!(
                "{} ground-truth labels for {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Config("cannot score an empty outcome".into()));
        }
        Ok(Self { truth, predicted })
    }

    pub fn n(&self) -> usize {
        self.truth.len()
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    /// Per predicted cluster, the counts of each true label in it.
    fn contingency(&self) -> Vec<Vec<usize>> {
        let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
        for (x, y) in self.truth.iter().zip(&self.predicted) {
            *table.entry(*y).or_default().entry(*x).or_default() += 1;
        }
        let mut rows: Vec<(usize, Vec<usize>)> = table
            .into_iter()
            .map(|(y, counts)| {
                let mut c: Vec<(usize, usize)> = counts.into_iter().collect();
                c.sort_unstable();
                (y, c.into_iter().map(|p| p.1).collect())
            })
            .collect();
        // Fixed summation order keeps results reproducible to the last bit.
        rows.sort_unstable_by_key(|r| r.0);
        rows.into_iter().map(|r| r.1).collect()
    }
}

/// `sum_y p(y) max_x p(x | y)`, in `(0, 1]`.
pub fn purity(outcome: &LabeledOutcome) -> f64 {
    let majority: usize = outcome
        .contingency()
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / outcome.n() as f64
}

/// `H(X | Y) = sum_y p(y) sum_x p(x | y) ln(1 / p(x | y))`, in nats.
pub fn conditional_entropy(outcome: &LabeledOutcome) -> f64 {
    let n = outcome.n() as f64;
    outcome
        .contingency()
        .iter()
        .map(|row| {
            let size: usize = row.iter().sum();
            let size = size as f64;
            let h: f64 = row
                .iter()
                .filter(|c| **c > 0)
                .map(|c| {
                    let p = *c as f64 / size;
                    -p * p.ln()
                })
                .sum();
            size / n * h
        })
        .sum()
}

/// Number of distinct labels.
pub fn count_labels(labels: &[usize]) -> usize {
    let mut l = labels.to_vec();
    l.sort_unstable();
    l.dedup();
    l.len()
}

/// First iteration whose current energy is within `rel * |target|` of `target`.
pub fn first_within(trace: &[TraceRecord], target: f64, rel: f64) -> Option<usize> {
    let bound = target + rel * target.abs();
    trace.iter().find(|t| t.energy <= bound).map(|t| t.iteration)
}

/// Synthetic responses: `n_clusters` prototypes with disjoint supports of
/// `separation` components each, and `per_cluster` noisy copies of each.
///
/// Prototype values on the support are uniform in `[0.4, 0.9)`, zero
/// elsewhere. Members add Gaussian noise of standard deviation `noise`,
/// truncated to three deviations, to every component and are clamped back
/// into `[0, 1)`. Images are ordered cluster by cluster; ids are `c{k}_{i}`.
pub fn synth_representations<S: Scalar>(
    n_clusters: usize,
    per_cluster: usize,
    dim: usize,
    separation: usize,
    noise: f64,
    seed: u64,
) -> Result<(Vec<ImageRepresentation<S>>, Vec<usize>)> {
    if separation == 0 {
        return Err(Error::Config("synthetic support width must be positive".into()));
    }
    if n_clusters * separation > dim {
        return Err(Error::Config(format!(
            "{n_clusters} disjoint supports of width {separation} do not fit in {dim} components"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise {noise} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..n_clusters)
        .map(|k| {
            let mut p = vec![0.0; dim];
            for v in &mut p[k * separation..(k + 1) * separation] {
                *v = rng.random_range(0.4..0.9);
            }
            p
        })
        .collect();
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite positive deviation"));

    let mut reps = Vec::with_capacity(n_clusters * per_cluster);
    let mut truth = Vec::with_capacity(n_clusters * per_cluster);
    for (k, proto) in prototypes.iter().enumerate() {
        for i in 0..per_cluster {
            let responses = proto
                .iter()
                .map(|p| {
                    let e = match &normal {
                        Some(d) => loop {
                            let e: f64 = d.sample(&mut rng);
                            if e.abs() <= 3.0 * noise {
                                break e;
                            }
                        },
                        None => 0.0,
                    };
                    S::lit((p + e).clamp(0.0, MAX_RESPONSE))
                })
                .collect();
            reps.push(ImageRepresentation::new(format!("c{k}_{i}"), responses));
            truth.push(k);
        }
    }
    Ok((reps, truth))
}
