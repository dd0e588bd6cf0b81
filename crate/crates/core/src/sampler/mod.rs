//! Swendsen-Wang cuts over the image graph, in the original single-CP form
//! (`swc`) and the compositional form (`cswc`) that relabels several
//! combinatorial clusters per step.
//!
//! The chain targets `p(S | D) ~ exp(-beta K) prod_k prod_{I in pi_k} phi_k(I)`,
//! i.e. it minimizes the energy `beta K - sum_k sum_{I in pi_k} log phi_k(I)`.
//! Models of the categories a move touches are re-pursued before the move is
//! scored; every other category keeps its model.

pub mod clusters;
pub mod partition;

use std::collections::BTreeMap;

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::model::{
    background_expectations, expectations_from_sum, log_phi, pursue_from_members, pursue_model, BackgroundModel,
    CategoryModel, DEFAULT_MAX_FEATURES,
};
use crate::representation::ImageRepresentation;
use crate::scalar::Scalar;

use clusters::{build_cp_graph, combinatorial_clusters, sample_cps, select_uniform, UnionFind};
pub use partition::{canonical_labels, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One CP relabelled per step.
    Swc,
    /// Several combinatorial clusters of CPs relabelled per step.
    Cswc,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swc" => Ok(Mode::Swc),
            "cswc" => Ok(Mode::Cswc),
            other => Err(Error::Config(format!("unknown sampler mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Every image in its own category.
    Singletons,
    /// Connected components of the edges with `q >= min_q`.
    Components {
        min_q: f64,
    },
    Labels {
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub max_iters: usize,
    pub beta: f64,
    pub max_features: usize,
    pub mode: Mode,
    /// Combinatorial clusters per step are drawn uniformly from `n_select_min..=n_select_max`.
    pub n_select_min: usize,
    pub n_select_max: usize,
    pub init: Init,
    /// Stop after this many iterations without a best-energy improvement.
    pub plateau: Option<usize>,
    /// Compare the running energy with a from-scratch recomputation every this many iterations.
    pub check_energy_every: Option<usize>,
    pub energy_tolerance: f64,
    pub log_every: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            beta: 300.0,
            max_features: DEFAULT_MAX_FEATURES,
            mode: Mode::Cswc,
            n_select_min: 1,
            n_select_max: 3,
            init: Init::Singletons,
            plateau: None,
            check_energy_every: None,
            energy_tolerance: 1e-8,
            log_every: Some(100),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "beta {} must be finite and non-negative",
                self.beta
            )));
        }
        if self.n_select_min == 0 || self.n_select_min > self.n_select_max {
            return Err(Error::Config(format!(
                "cluster selection range {}..={} is empty or starts at 0",
                self.n_select_min, self.n_select_max
            )));
        }
        if self.plateau == Some(0) || self.check_energy_every == Some(0) || self.log_every == Some(0) {
            return Err(Error::Config("iteration strides must be positive".into()));
        }
        match &self.init {
            Init::Labels { labels } if labels.len() != n => Err(Error::Config(format!(
                "initial labelling has {} entries for {n} images",
                labels.len()
            ))),
            Init::Components { min_q } if !(*min_q > 0.0 && *min_q <= 1.0) => {
                Err(Error::Config(format!("component threshold {min_q} must lie in (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// `(K, partition, models)` with the energy of that state.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<S> {
    pub partition: Partition,
    /// `models[k]` belongs to category `k`.
    pub models: Vec<CategoryModel<S>>,
    pub energy: S,
}

impl<S: Scalar> Solution<S> {
    pub fn k(&self) -> usize {
        self.partition.k()
    }
}

/// `beta K - sum_k sum_{I in pi_k} log_phi(model_k, I)` from the stored models.
pub fn energy<S: Scalar>(
    partition: &Partition,
    models: &[CategoryModel<S>],
    reps: &[ImageRepresentation<S>],
    beta: S,
) -> S {
    let loglik: S = (0..partition.k())
        .map(|k| {
            partition
                .members(k)
                .iter()
                .map(|v| log_phi(&models[k], &reps[*v].responses))
                .sum::<S>()
        })
        .sum();
    beta * S::from_count(partition.k()) - loglik
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub energy: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub accepted: bool,
    pub best_energy: f64,
}

#[derive(Debug, Clone)]
struct Category<S> {
    members: Vec<usize>,
    model: CategoryModel<S>,
    loglik: S,
}

/// Vertex sets to relabel and their proposed labels; label `K` is the fresh label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub sets: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Evaluation<S> {
    pub identity: bool,
    /// `ln prod_{C_B}(1 - q) - ln prod_{C_A}(1 - q)`.
    pub log_cut_ratio: S,
    /// `n_sets * ln((K_A + 1) / (K_B + 1))`, the label-draw part of the proposal ratio.
    pub log_label_ratio: S,
    pub energy_a: S,
    pub energy_b: S,
    pub k_b: usize,
    /// `ln min(1, Q(B->A) p(B) / (Q(A->B) p(A)))`.
    pub log_alpha: S,
    refits: Vec<(usize, Option<Category<S>>)>,
}

impl<S: Scalar> Evaluation<S> {
    pub fn alpha(&self) -> S {
        self.log_alpha.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub identity: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    pub best: Solution<S>,
    pub last: Solution<S>,
    pub trace: Vec<TraceRecord>,
}

/// Work (member rows times components) above which refits run on the thread pool.
const PARALLEL_REFIT_WORK: usize = 1 << 18;

/// The Markov chain over partitions; owns the current state.
pub struct Sampler<'a, S: Scalar> {
    graph: &'a SimilarityGraph<S>,
    rows: Vec<&'a [S]>,
    background: BackgroundModel<S>,
    config: SamplerConfig,
    beta: S,
    labels: Vec<usize>,
    cats: Vec<Category<S>>,
    energy: S,
}

impl<'a, S: Scalar> Sampler<'a, S> {
    pub fn new(
        graph: &'a SimilarityGraph<S>,
        reps: &'a [ImageRepresentation<S>],
        config: SamplerConfig,
    ) -> Result<Self> {
        let background = background_expectations(reps)?;
        Self::with_background(graph, reps, background, config)
    }

    pub fn with_background(
        graph: &'a SimilarityGraph<S>,
        reps: &'a [ImageRepresentation<S>],
        background: BackgroundModel<S>,
        config: SamplerConfig,
    ) -> Result<Self> {
        let n = graph.n_vertices();
        if reps.len() != n {
            return Err(Error::Config(format!(
                "{} representations for a graph of {n} vertices",
                reps.len()
            )));
        }
        if let Some(bad) = reps.iter().find(|r| r.dim() != background.dim()) {
            return Err(Error::Config(format!(
                "representation {} has {} components, background has {}",
                bad.id,
                bad.dim(),
                background.dim()
            )));
        }
        config.validate(n)?;

        let initial = match &config.init {
            Init::Singletons => (0..n).collect(),
            Init::Labels { labels } => labels.clone(),
            Init::Components { min_q } => {
                let mut uf = UnionFind::new(n);
                for e in graph.edges() {
                    if e.q.as_f64() >= *min_q {
                        uf.union(e.s, e.t);
                    }
                }
                uf.components().0
            }
        };
        let mut sampler = Self {
            graph,
            rows: reps.iter().map(|r| r.responses.as_slice()).collect(),
            background,
            beta: S::lit(config.beta),
            config,
            labels: Vec::new(),
            cats: Vec::new(),
            energy: S::zero(),
        };
        sampler.reset(&initial);
        Ok(sampler)
    }

    /// Replaces the current state with `labels` (any label values) and refits every model.
    pub fn reset(&mut self, labels: &[usize]) {
        let partition = Partition::from_labels(labels);
        self.labels = partition.labels().to_vec();
        let fits: Vec<Category<S>> = (0..partition.k())
            .into_par_iter()
            .map(|k| self.fit(partition.members(k).to_vec()))
            .collect();
        self.cats = fits;
        self.energy = self.bookkept_energy();
    }

    fn fit(&self, members: Vec<usize>) -> Category<S> {
        let dim = self.background.dim();
        let mut sum = vec![S::zero(); dim];
        for v in &members {
            for (s, r) in sum.iter_mut().zip(self.rows[*v]) {
                *s += *r;
            }
        }
        let model = pursue_model(
            &expectations_from_sum(&sum, members.len()),
            &self.background,
            self.config.max_features,
        );
        let loglik = model.log_likelihood_of_sum(&sum, members.len());
        Category { members, model, loglik }
    }

    fn bookkept_energy(&self) -> S {
        let loglik: S = self.cats.iter().map(|c| c.loglik).sum();
        self.beta * S::from_count(self.cats.len()) - loglik
    }

    pub fn energy(&self) -> S {
        self.energy
    }

    pub fn k(&self) -> usize {
        self.cats.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn background(&self) -> &BackgroundModel<S> {
        &self.background
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.labels)
    }

    pub fn solution(&self) -> Solution<S> {
        Solution {
            partition: self.partition(),
            models: self.cats.iter().map(|c| c.model.clone()).collect(),
            energy: self.energy,
        }
    }

    /// Energy recomputed from the member lists alone: fresh pursuit per
    /// category and a per-image sum of `log_phi`.
    pub fn recompute_energy(&self) -> S {
        let partition = self.partition();
        let models: Vec<CategoryModel<S>> = (0..partition.k())
            .map(|k| {
                let rows: Vec<&[S]> = partition.members(k).iter().map(|v| self.rows[*v]).collect();
                pursue_from_members(&rows, &self.background, self.config.max_features)
            })
            .collect();
        let loglik: S = (0..partition.k())
            .map(|k| {
                partition
                    .members(k)
                    .iter()
                    .map(|v| log_phi(&models[k], self.rows[*v]))
                    .sum::<S>()
            })
            .sum();
        self.beta * S::from_count(partition.k()) - loglik
    }

    /// Samples the vertex sets to relabel and a label for each.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Proposal {
        let sample = sample_cps(self.graph, &self.labels, rng);
        let sets: Vec<Vec<usize>> = match self.config.mode {
            Mode::Swc => {
                let pick = rng.random_range(0..sample.cps.len());
                vec![sample.cps[pick].vertices.clone()]
            }
            Mode::Cswc => {
                let cp_graph = build_cp_graph(self.graph, &sample.cp_of, sample.cps.len());
                let all = combinatorial_clusters(&cp_graph, rng);
                let n_select = rng.random_range(self.config.n_select_min..=self.config.n_select_max);
                select_uniform(all.len(), n_select, rng)
                    .into_iter()
                    .map(|c| {
                        let mut vs: Vec<usize> = all[c]
                            .iter()
                            .flat_map(|cp| sample.cps[*cp].vertices.iter().copied())
                            .collect();
                        vs.sort_unstable();
                        vs
                    })
                    .collect()
            }
        };
        let k = self.cats.len();
        let labels = sets.iter().map(|_| rng.random_range(0..=k)).collect();
        Proposal { sets, labels }
    }

    /// Scores a proposal against the current state without changing it.
    ///
    /// # Panics
    /// If the sets overlap, a label exceeds the fresh label `K`, or the
    /// proposal has a different number of sets and labels.
    pub fn evaluate(&self, proposal: &Proposal) -> Evaluation<S> {
        assert_eq!(proposal.sets.len(), proposal.labels.len(), "one label per set");
        let n = self.labels.len();
        let k_a = self.cats.len();
        let mut set_of = vec![usize::MAX; n];
        for (i, set) in proposal.sets.iter().enumerate() {
            assert!(
                proposal.labels[i] <= k_a,
                "label {} beyond the fresh label {k_a}",
                proposal.labels[i]
            );
            for v in set {
                assert_eq!(set_of[*v], usize::MAX, "vertex {v} appears in two sets");
                set_of[*v] = i;
            }
        }
        let label_b = |v: usize| match set_of[v] {
            usize::MAX => self.labels[v],
            i => proposal.labels[i],
        };

        let identity = proposal
            .sets
            .iter()
            .zip(&proposal.labels)
            .all(|(set, l)| set.iter().all(|v| self.labels[*v] == *l));
        if identity {
            return Evaluation {
                identity,
                log_cut_ratio: S::zero(),
                log_label_ratio: S::zero(),
                energy_a: self.energy,
                energy_b: self.energy,
                k_b: k_a,
                log_alpha: S::zero(),
                refits: Vec::new(),
            };
        }

        let (mut cut_a, mut cut_b) = (S::zero(), S::zero());
        for (i, set) in proposal.sets.iter().enumerate() {
            for &v in set {
                for &(u, e) in self.graph.neighbors(v) {
                    if set_of[u] == i {
                        continue;
                    }
                    let log_off = (-self.graph.edges()[e].q).ln_1p();
                    if self.labels[u] == self.labels[v] {
                        cut_a += log_off;
                    }
                    if label_b(u) == label_b(v) {
                        cut_b += log_off;
                    }
                }
            }
        }
        let log_cut_ratio = if cut_b == S::neg_infinity() {
            S::neg_infinity()
        } else if cut_a == S::neg_infinity() {
            S::infinity()
        } else {
            cut_b - cut_a
        };

        let mut moves: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for set in &proposal.sets {
            for &v in set {
                let (from, to) = (self.labels[v], label_b(v));
                if from != to {
                    moves.entry(from).or_default().0.push(v);
                    moves.entry(to).or_default().1.push(v);
                }
            }
        }
        let touched: Vec<(usize, Vec<usize>)> = moves
            .into_iter()
            .map(|(label, (mut out, mut inn))| {
                out.sort_unstable();
                inn.sort_unstable();
                let current: &[usize] = if label < k_a { &self.cats[label].members } else { &[] };
                let mut members: Vec<usize> = current
                    .iter()
                    .copied()
                    .filter(|v| out.binary_search(v).is_err())
                    .collect();
                members.extend(inn);
                members.sort_unstable();
                (label, members)
            })
            .collect();
        let work: usize = touched.iter().map(|t| t.1.len()).sum::<usize>() * self.background.dim();
        let fit = |(label, members): (usize, Vec<usize>)| (label, (!members.is_empty()).then(|| self.fit(members)));
        let refits: Vec<(usize, Option<Category<S>>)> = if work > PARALLEL_REFIT_WORK {
            touched.into_par_iter().map(fit).collect()
        } else {
            touched.into_iter().map(fit).collect()
        };

        let mut k_b = k_a;
        let mut loglik_b: S = self.cats.iter().map(|c| c.loglik).sum();
        for (label, cat) in &refits {
            if *label < k_a {
                loglik_b -= self.cats[*label].loglik;
                k_b -= 1;
            }
            if let Some(c) = cat {
                loglik_b += c.loglik;
                k_b += 1;
            }
        }
        let energy_b = self.beta * S::from_count(k_b) - loglik_b;
        let n_sets = S::from_count(proposal.sets.len());
        let log_label_ratio = n_sets * (S::from_count(k_a + 1).ln() - S::from_count(k_b + 1).ln());
        let log_alpha = (log_cut_ratio + log_label_ratio + (self.energy - energy_b)).min(S::zero());
        Evaluation {
            identity,
            log_cut_ratio,
            log_label_ratio,
            energy_a: self.energy,
            energy_b,
            k_b,
            log_alpha,
            refits,
        }
    }

    /// Moves to the proposed state scored by `evaluation`.
    pub fn apply(&mut self, proposal: &Proposal, evaluation: Evaluation<S>) {
        if evaluation.identity {
            return;
        }
        let k_a = self.cats.len();
        for (set, label) in proposal.sets.iter().zip(&proposal.labels) {
            for v in set {
                self.labels[*v] = *label;
            }
        }
        let mut slots: Vec<Option<Category<S>>> = std::mem::take(&mut self.cats).into_iter().map(Some).collect();
        slots.push(None);
        for (label, cat) in evaluation.refits {
            slots[label] = cat;
        }
        let mut remap = vec![usize::MAX; k_a + 1];
        for (old, slot) in slots.into_iter().enumerate() {
            if let Some(cat) = slot {
                remap[old] = self.cats.len();
                self.cats.push(cat);
            }
        }
        for l in &mut self.labels {
            *l = remap[*l];
        }
        self.energy = self.bookkept_energy();
    }

    /// One Metropolis-Hastings step.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        let proposal = self.propose(rng);
        let evaluation = self.evaluate(&proposal);
        let u: f64 = rng.random();
        let alpha = evaluation.alpha().as_f64();
        let accepted = u < alpha;
        let identity = evaluation.identity;
        if accepted {
            self.apply(&proposal, evaluation);
        }
        StepOutcome {
            accepted,
            identity,
            alpha,
        }
    }

    /// Runs up to `max_iters` steps and returns the lowest-energy state visited.
    pub fn run<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<RunOutput<S>> {
        let mut best = self.solution();
        let mut trace = vec![TraceRecord {
            iteration: 0,
            energy: self.energy.as_f64(),
            k: self.k(),
            accepted: false,
            best_energy: best.energy.as_f64(),
        }];
        let mut last_improvement = 0;
        for it in 1..=self.config.max_iters {
            let outcome = self.step(rng);
            if self.energy < best.energy {
                best = self.solution();
                last_improvement = it;
            }
            trace.push(TraceRecord {
                iteration: it,
                energy: self.energy.as_f64(),
                k: self.k(),
                accepted: outcome.accepted,
                best_energy: best.energy.as_f64(),
            });
            if let Some(every) = self.config.check_energy_every {
                if it % every == 0 {
                    let recomputed = self.recompute_energy();
                    let scale = S::one().max(recomputed.abs());
                    if (recomputed - self.energy).abs() > S::lit(self.config.energy_tolerance) * scale {
                        return Err(Error::EnergyDrift {
                            iteration: it,
                            incremental: self.energy.as_f64(),
                            recomputed: recomputed.as_f64(),
                        });
                    }
                }
            }
            if let Some(every) = self.config.log_every {
                if it % every == 0 {
                    info!(
                        "iteration {it}: energy {:.4}, K {}, best {:.4}",
                        self.energy,
                        self.k(),
                        best.energy
                    );
                }
            }
            if self.config.plateau.is_some_and(|p| it - last_improvement >= p) {
                break;
            }
        }
        Ok(RunOutput {
            last: self.solution(),
            best,
            trace,
        })
    }
}

/// Builds a sampler and runs it.
pub fn run<S: Scalar, R: Rng + ?Sized>(
    graph: &SimilarityGraph<S>,
    reps: &[ImageRepresentation<S>],
    config: SamplerConfig,
    rng: &mut R,
) -> Result<RunOutput<S>> {
    Sampler::new(graph, reps, config)?.run(rng)
}

#[cfg(test)]
mod tests;
