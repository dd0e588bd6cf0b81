//! Per-category generative word models learned by greedy MaxMin-KL pursuit.
//!
//! A category model tilts the background model by one exponential factor per
//! selected feature: `phi(I) = phi_0(I) * prod_t exp(lambda_t * r_t(I)) / z_t`.
//! Features are pyramid components `(block, word)`. Each factor is fitted in
//! closed form so that the tilted model reproduces the category's mean
//! response on that feature.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::representation::ImageRepresentation;
use crate::scalar::Scalar;

/// Expectations are kept inside `[EXPECTATION_CLAMP, 1 - EXPECTATION_CLAMP]`.
pub const EXPECTATION_CLAMP: f64 = 0.01;

/// Default cap on selected features per category.
pub const DEFAULT_MAX_FEATURES: usize = 40;

#[inline]
pub fn clamp_expectation<S: Scalar>(v: S) -> S {
    let eps = S::lit(EXPECTATION_CLAMP);
    v.max(eps).min(S::one() - eps)
}

/// One component of the pyramid representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureRef {
    pub block: usize,
    pub word: usize,
}

impl FeatureRef {
    pub fn from_component(index: usize, m: usize) -> Self {
        Self {
            block: index / m,
            word: index % m,
        }
    }

    pub fn component(&self, m: usize) -> usize {
        self.block * m + self.word
    }
}

/// Dataset-wide clamped mean response per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel<S> {
    pub e0: Vec<S>,
}

impl<S: Scalar> BackgroundModel<S> {
    pub fn dim(&self) -> usize {
        self.e0.len()
    }
}

/// Clamped per-feature mean of `rows`.
///
/// # Panics
/// On an empty member list; an empty category has no expectation.
pub fn category_expectations<S: Scalar>(rows: &[&[S]]) -> Vec<S> {
    assert!(!rows.is_empty(), "category expectations of an empty category");
    let dim = rows[0].len();
    let mut sum = vec![S::zero(); dim];
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r.iter()) {
            *s += *v;
        }
    }
    expectations_from_sum(&sum, rows.len())
}

pub fn expectations_from_sum<S: Scalar>(sum: &[S], n: usize) -> Vec<S> {
    let n = S::from_count(n);
    sum.iter().map(|s| clamp_expectation(*s / n)).collect()
}

pub fn background_expectations<S: Scalar>(reps: &[ImageRepresentation<S>]) -> Result<BackgroundModel<S>> {
    if reps.is_empty() {
        return Err(Error::Config("background model needs at least one image".into()));
    }
    let rows: Vec<&[S]> = reps.iter().map(|r| r.responses.as_slice()).collect();
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Config("representations differ in length".into()));
    }
    Ok(BackgroundModel {
        e0: category_expectations(&rows),
    })
}

/// Closed-form tilt `(lambda, z)` that moves a Bernoulli(`e_0`) response to mean `e_f`.
///
/// `lambda = ln[e_f (1 - e_0) / ((1 - e_f) e_0)]` and
/// `z = e^lambda e_0 + 1 - e_0`, which reduces to `(1 - e_0) / (1 - e_f)`.
pub fn min_kl_solve<S: Scalar>(e_f: S, e_0: S) -> (S, S) {
    let (lambda, log_z) = min_kl_solve_log(e_f, e_0);
    (lambda, log_z.exp())
}

/// As [`min_kl_solve`], returning `ln z` instead of `z`.
pub fn min_kl_solve_log<S: Scalar>(e_f: S, e_0: S) -> (S, S) {
    let one = S::one();
    let log_not_f = (one - e_f).ln();
    let log_not_0 = (one - e_0).ln();
    let lambda = e_f.ln() + log_not_0 - log_not_f - e_0.ln();
    (lambda, log_not_0 - log_not_f)
}

/// Information gain `lambda * e_f - ln z` of one fitted feature.
#[inline]
pub fn feature_gain<S: Scalar>(lambda: S, log_z: S, e_f: S) -> S {
    lambda * e_f - log_z
}

/// Unselected feature with the largest `e_f - e_0`, or `None` when no feature
/// has a positive difference. Ties go to the lowest index.
pub fn max_kl_select<S: Scalar>(e_f: &[S], e_0: &[S], selected: &HashSet<usize>) -> Option<usize> {
    assert_eq!(e_f.len(), e_0.len(), "expectation vectors differ in length");
    let mut best: Option<(usize, S)> = None;
    for (i, (f, b)) in e_f.iter().zip(e_0).enumerate() {
        if selected.contains(&i) {
            continue;
        }
        let d = *f - *b;
        if d > S::zero() && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedFeature<S> {
    /// Component index into the representation.
    pub feature: usize,
    pub lambda: S,
    pub z: S,
    pub log_z: S,
    pub gain: S,
    /// Category expectation the factor was fitted to.
    pub e_f: S,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryModel<S> {
    pub selected: Vec<SelectedFeature<S>>,
}

impl<S: Scalar> CategoryModel<S> {
    pub fn empty() -> Self {
        Self { selected: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn total_gain(&self) -> S {
        self.selected.iter().map(|f| f.gain).sum()
    }

    /// Sum of `log_phi` over `n` members whose summed responses are `sum`.
    pub fn log_likelihood_of_sum(&self, sum: &[S], n: usize) -> S {
        let n = S::from_count(n);
        self.selected
            .iter()
            .map(|f| f.lambda * sum[f.feature] - n * f.log_z)
            .sum()
    }
}

/// Greedy pursuit of at most `max_features` features.
///
/// Features enter in decreasing `e_f - e_0` (the order [`max_kl_select`]
/// visits them) until none has a positive difference. The selected set is then
/// stored in decreasing order of information gain.
pub fn pursue_model<S: Scalar>(e_f: &[S], background: &BackgroundModel<S>, max_features: usize) -> CategoryModel<S> {
    let e_0 = &background.e0;
    assert_eq!(e_f.len(), e_0.len(), "category and background differ in length");

    let mut candidates: Vec<(usize, S)> = e_f
        .iter()
        .zip(e_0)
        .enumerate()
        .map(|(i, (f, b))| (i, *f - *b))
        .filter(|(_, d)| *d > S::zero())
        .collect();
    let by_score = |a: &(usize, S), b: &(usize, S)| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0));
    if candidates.len() > max_features {
        if max_features > 0 {
            candidates.select_nth_unstable_by(max_features - 1, by_score);
        }
        candidates.truncate(max_features);
    }
    candidates.sort_by(by_score);

    let mut selected: Vec<SelectedFeature<S>> = candidates
        .into_iter()
        .map(|(feature, _)| {
            let (lambda, log_z) = min_kl_solve_log(e_f[feature], e_0[feature]);
            SelectedFeature {
                feature,
                lambda,
                z: log_z.exp(),
                log_z,
                gain: feature_gain(lambda, log_z, e_f[feature]),
                e_f: e_f[feature],
            }
        })
        .collect();
    selected.sort_by(|a, b| b.gain.partial_cmp(&a.gain).unwrap());
    CategoryModel { selected }
}

/// Pursuit from explicit member responses.
pub fn pursue_from_members<S: Scalar>(
    members: &[&[S]],
    background: &BackgroundModel<S>,
    max_features: usize,
) -> CategoryModel<S> {
    pursue_model(&category_expectations(members), background, max_features)
}

/// `sum_t lambda_t r_t(I) - ln z_t`; the image's base density is left out.
pub fn log_phi<S: Scalar>(model: &CategoryModel<S>, responses: &[S]) -> S {
    model
        .selected
        .iter()
        .map(|f| f.lambda * responses[f.feature] - f.log_z)
        .sum()
}
