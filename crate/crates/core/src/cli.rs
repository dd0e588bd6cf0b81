//! Command-line pipeline: dictionary building, encoding, categorization,
//! scoring and the SWC/CSWC convergence benchmark.
//!
//! Every subcommand reads an optional JSON [`PipelineConfig`], applies its
//! flags on top, and writes the resolved configuration as `config.json` in
//! its output directory. Re-running with that file reproduces the stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{build_dictionary, load_dictionary, save_dictionary, PatchSampling};
use crate::evaluation::{
    conditional_entropy, count_labels, first_within, purity, synth_representations, LabeledOutcome,
};
use crate::graph::{build_graph, GraphParams};
use crate::imaging::{load_gray, CslbpParams, GrayImage};
use crate::report::{
    align_labels, mean_std, read_labels, write_metrics, write_selected_words, write_solution, write_trace, LabelRow,
    MetricRow,
};
use crate::representation::{
    check_encodable, encode_all, load_representations, save_representations, EncodeParams, N_BLOCKS,
};
use crate::sampler::{Mode, Sampler, SamplerConfig};
use crate::Real;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "CSWC_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub images: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub representations: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub solutions: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub n_itw: usize,
    pub n_htw: usize,
    pub patches_per_image: usize,
    pub max_pool: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self {
            n_itw: 500,
            n_htw: 500,
            patches_per_image: 200,
            max_pool: 200_000,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationConfig {
    pub patch_sides: Vec<usize>,
    pub stride_fraction: f64,
    pub saturation: f64,
    pub cslbp_radius: f64,
    pub cslbp_threshold: f64,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            patch_sides: vec![16, 24, 32],
            stride_fraction: 0.5,
            saturation: 8.0,
            cslbp_radius: 2.0,
            cslbp_threshold: 1.0,
        }
    }
}

impl RepresentationConfig {
    fn cslbp(&self) -> CslbpParams<Real> {
        CslbpParams {
            radius: self.cslbp_radius,
            threshold: self.cslbp_threshold,
        }
    }

    fn encode_params(&self) -> EncodeParams<Real> {
        EncodeParams {
            sides: self.patch_sides.clone(),
            stride_fraction: self.stride_fraction,
            saturation: self.saturation,
            cslbp: self.cslbp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub tau: f64,
    pub max_neighbors: usize,
    pub smoothing: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        let p = GraphParams::<Real>::default();
        Self {
            tau: p.tau,
            max_neighbors: p.max_neighbors,
            smoothing: p.smoothing,
        }
    }
}

impl GraphConfig {
    fn params(&self) -> GraphParams<Real> {
        GraphParams {
            tau: self.tau,
            max_neighbors: self.max_neighbors,
            smoothing: self.smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub separation: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 4,
            per_cluster: 25,
            dim: 144,
            separation: 32,
            noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Independent chains per categorization, seeded `seed, seed + 1, ...`.
    pub runs: usize,
    pub paths: Paths,
    pub dictionary: DictionaryConfig,
    pub representation: RepresentationConfig,
    pub graph: GraphConfig,
    pub sampler: SamplerConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 1,
            paths: Paths::default(),
            dictionary: DictionaryConfig::default(),
            representation: RepresentationConfig::default(),
            graph: GraphConfig::default(),
            sampler: SamplerConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cswc",
    version,
    about = "Unsupervised scene categorization by compositional Swendsen-Wang cuts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample patches and cluster them into ITW and HTW words.
    DictBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        n_itw: Option<usize>,
        #[arg(long)]
        n_htw: Option<usize>,
    },
    /// Encode every image as a 9-block pyramid of word responses.
    Represent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
    /// Build the similarity graph and sample a partition into categories.
    Categorize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        representations: Option<PathBuf>,
        /// Used only to label word types in the selected-words file.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Score one or more solution files against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        solutions: Vec<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Run swc and cswc on the same input and seeds and record both traces.
    BenchConvergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        representations: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write synthetic representations with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_clusters: Option<usize>,
        #[arg(long)]
        per_cluster: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn resolve(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn prepare_out(out: &Path, config: &PipelineConfig) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    config.save(&out.join("config.json"))
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a PathBuf> {
    value.as_ref().with_context(|| {
        format!(
            "no {what} given; pass --{} or set it in the config",
            what.replace(' ', "-")
        )
    })
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Readable images of `dir` in file-name order; unreadable files are skipped with a warning.
pub fn read_image_dir(dir: &Path) -> anyhow::Result<Vec<(String, GrayImage<Real>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    let loaded: Vec<_> = paths
        .par_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                load_gray::<Real>(p),
            )
        })
        .collect();
    let mut images = Vec::new();
    let mut skipped = 0;
    for (id, img) in loaded {
        match img {
            Ok(img) => images.push((id, img)),
            Err(e) => {
                warn!("skipping {id}: {e}");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        warn!("{skipped} unreadable image(s) skipped");
    }
    if images.is_empty() {
        bail!("no readable images in {}", dir.display());
    }
    Ok(images)
}

fn dict_build(config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let dir = required(&config.paths.images, "images")?;
    let images: Vec<GrayImage<Real>> = read_image_dir(dir)?.into_iter().map(|(_, img)| img).collect();
    let d = &config.dictionary;
    let sampling = PatchSampling {
        sides: config.representation.patch_sides.clone(),
        per_image: d.patches_per_image,
        max_pool: d.max_pool,
        cslbp: config.representation.cslbp(),
    };
    let build = build_dictionary(
        &images,
        &sampling,
        d.n_itw,
        d.n_htw,
        config.seed,
        d.kmeans_max_iters,
        d.kmeans_tol,
    )?;
    println!(
        "ITW pool: {} descriptors, inertia {:.6}",
        build.itw_pool_size, build.itw_inertia
    );
    println!(
        "HTW pool: {} descriptors, inertia {:.6}",
        build.htw_pool_size, build.htw_inertia
    );
    let path = out.join("dictionary.bin");
    save_dictionary(&build.dictionary, &path)?;
    info!("wrote {} words to {}", build.dictionary.len(), path.display());
    Ok(())
}

fn represent(config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let dir = required(&config.paths.images, "images")?;
    let dict = load_dictionary::<Real>(required(&config.paths.dictionary, "dictionary")?)?;
    let sides = &config.representation.patch_sides;
    let images: Vec<(String, GrayImage<Real>)> = read_image_dir(dir)?
        .into_iter()
        .filter(
            |(id, img)| match check_encodable(id, img.width(), img.height(), sides) {
                Ok(()) => true,
                Err(e) => {
                    warn!("skipping {e}");
                    false
                }
            },
        )
        .collect();
    if images.is_empty() {
        bail!("no image in {} is large enough to encode", dir.display());
    }
    let reps = encode_all(&images, &dict, &config.representation.encode_params())?;
    let path = out.join("representations.bin");
    save_representations(&reps, &path)?;
    info!("encoded {} images into {}", reps.len(), path.display());
    Ok(())
}

fn words_per_block(dim: usize) -> usize {
    if dim.is_multiple_of(N_BLOCKS) {
        dim / N_BLOCKS
    } else {
        dim
    }
}

fn categorize(config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let reps = load_representations::<Real>(required(&config.paths.representations, "representations")?)?;
    let dict = config
        .paths
        .dictionary
        .as_deref()
        .map(load_dictionary::<Real>)
        .transpose()?;
    if config.runs == 0 {
        bail!("runs must be at least 1");
    }
    let graph = build_graph(&reps, &config.graph.params())?;
    info!("graph: {} vertices, {} edges", graph.n_vertices(), graph.edges().len());
    let ids: Vec<String> = reps.iter().map(|r| r.id.clone()).collect();
    let m = match &dict {
        Some(d) => d.len(),
        None => words_per_block(reps[0].dim()),
    };
    let kind_of = |w: usize| match &dict {
        Some(d) if w < d.len() => d.kind(w).to_string(),
        _ => "unknown".to_string(),
    };

    let seeds: Vec<u64> = (0..config.runs as u64).map(|r| config.seed.wrapping_add(r)).collect();
    let outputs = seeds
        .par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Sampler::new(&graph, &reps, config.sampler.clone())?.run(&mut rng)
        })
        .collect::<crate::Result<Vec<_>>>()?;

    for (seed, output) in seeds.iter().zip(&outputs) {
        let suffix = if config.runs == 1 {
            String::new()
        } else {
            format!("_seed{seed}")
        };
        write_solution(&out.join(format!("solution{suffix}.csv")), &ids, &output.best.partition)?;
        write_trace(&out.join(format!("trace{suffix}.csv")), &output.trace)?;
        write_selected_words(
            &out.join(format!("selected_words{suffix}.csv")),
            &output.best.models,
            m,
            &kind_of,
        )?;
        println!(
            "seed {seed}: K = {}, best energy {:.6} after {} iterations",
            output.best.k(),
            output.best.energy,
            output.trace.len() - 1
        );
    }
    Ok(())
}

fn evaluate(config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    if config.paths.solutions.is_empty() {
        bail!("no solutions given; pass --solutions or set paths.solutions in the config");
    }
    let truth_rows = read_labels(required(&config.paths.ground_truth, "ground truth")?)?;
    let mut purities = Vec::new();
    let mut entropies = Vec::new();
    let mut ks = Vec::new();
    for path in &config.paths.solutions {
        let predicted_rows = read_labels(path)?;
        let ids: Vec<String> = predicted_rows.iter().map(|r| r.image_id.clone()).collect();
        let truth = align_labels(&ids, &truth_rows, "ground-truth")?;
        let predicted = align_labels(&ids, &predicted_rows, "predicted")?;
        let k = count_labels(&predicted);
        let outcome = LabeledOutcome::new(truth, predicted)?;
        purities.push(purity(&outcome));
        entropies.push(conditional_entropy(&outcome));
        ks.push(k as f64);
    }
    let mut rows = Vec::new();
    for (name, values) in [
        ("purity", &purities),
        ("conditional_entropy", &entropies),
        ("inferred_k", &ks),
    ] {
        let (mean, std) = mean_std(values);
        rows.push(MetricRow {
            metric: format!("{name}_mean"),
            value: mean,
        });
        rows.push(MetricRow {
            metric: format!("{name}_std"),
            value: std,
        });
    }
    rows.push(MetricRow {
        metric: "runs".into(),
        value: purities.len() as f64,
    });
    for (i, ((p, h), k)) in purities.iter().zip(&entropies).zip(&ks).enumerate() {
        rows.push(MetricRow {
            metric: format!("purity_run{i}"),
            value: *p,
        });
        rows.push(MetricRow {
            metric: format!("conditional_entropy_run{i}"),
            value: *h,
        });
        rows.push(MetricRow {
            metric: format!("inferred_k_run{i}"),
            value: *k,
        });
    }
    write_metrics(&out.join("metrics.csv"), &rows)?;
    for r in rows.iter().take(6) {
        println!("{}: {:.6}", r.metric, r.value);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConvergenceRow {
    seed: u64,
    mode: &'static str,
    iterations_to_within_1pct: Option<usize>,
    best_energy: f64,
    pair_best_energy: f64,
}

fn bench_convergence(config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let reps = load_representations::<Real>(required(&config.paths.representations, "representations")?)?;
    if config.runs == 0 {
        bail!("runs must be at least 1");
    }
    let graph = build_graph(&reps, &config.graph.params())?;
    let seeds: Vec<u64> = (0..config.runs as u64).map(|r| config.seed.wrapping_add(r)).collect();
    let runs = seeds
        .par_iter()
        .map(|seed| {
            let run_mode = |mode| {
                let cfg = SamplerConfig {
                    mode,
                    ..config.sampler.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Sampler::new(&graph, &reps, cfg)?.run(&mut rng)
            };
            Ok((run_mode(Mode::Swc)?, run_mode(Mode::Cswc)?))
        })
        .collect::<crate::Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_path(out.join("convergence.csv"))?;
    for (seed, (swc, cswc)) in seeds.iter().zip(&runs) {
        write_trace(&out.join(format!("trace_swc_seed{seed}.csv")), &swc.trace)?;
        write_trace(&out.join(format!("trace_cswc_seed{seed}.csv")), &cswc.trace)?;
        let pair_best = swc.best.energy.min(cswc.best.energy);
        for (mode, run) in [("swc", swc), ("cswc", cswc)] {
            let hit = first_within(&run.trace, pair_best, 0.01);
            w.serialize(ConvergenceRow {
                seed: *seed,
                mode,
                iterations_to_within_1pct: hit,
                best_energy: run.best.energy,
                pair_best_energy: pair_best,
            })?;
            println!(
                "seed {seed} {mode}: best {:.6}, within 1% after {hit:?} iterations",
                run.best.energy
            );
        }
    }
    w.flush()?;
    Ok(())
}

fn synth(config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let s = &config.synth;
    let (reps, truth) =
        synth_representations::<Real>(s.n_clusters, s.per_cluster, s.dim, s.separation, s.noise, config.seed)?;
    save_representations(&reps, &out.join("representations.bin"))?;
    let mut w = csv::Writer::from_path(out.join("ground_truth.csv"))?;
    for (r, t) in reps.iter().zip(&truth) {
        w.serialize(LabelRow {
            image_id: r.id.clone(),
            label: t.to_string(),
        })?;
    }
    w.flush()?;
    info!("wrote {} synthetic representations", reps.len());
    Ok(())
}

fn set_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

type Stage = fn(&PipelineConfig, &Path) -> anyhow::Result<()>;

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, config, action): (&Common, PipelineConfig, Stage) = match &cli.command {
        Command::DictBuild {
            common,
            images,
            n_itw,
            n_htw,
        } => {
            let mut c = resolve(common)?;
            if images.is_some() {
                c.paths.images = images.clone();
            }
            set_opt(&mut c.dictionary.n_itw, *n_itw);
            set_opt(&mut c.dictionary.n_htw, *n_htw);
            (common, c, dict_build)
        }
        Command::Represent {
            common,
            images,
            dictionary,
        } => {
            let mut c = resolve(common)?;
            if images.is_some() {
                c.paths.images = images.clone();
            }
            if dictionary.is_some() {
                c.paths.dictionary = dictionary.clone();
            }
            (common, c, represent)
        }
        Command::Categorize {
            common,
            representations,
            dictionary,
            mode,
            max_iters,
            beta,
            runs,
        } => {
            let mut c = resolve(common)?;
            if representations.is_some() {
                c.paths.representations = representations.clone();
            }
            if dictionary.is_some() {
                c.paths.dictionary = dictionary.clone();
            }
            set_opt(&mut c.sampler.mode, *mode);
            set_opt(&mut c.sampler.max_iters, *max_iters);
            set_opt(&mut c.sampler.beta, *beta);
            set_opt(&mut c.runs, *runs);
            (common, c, categorize)
        }
        Command::Evaluate {
            common,
            solutions,
            ground_truth,
        } => {
            let mut c = resolve(common)?;
            if !solutions.is_empty() {
                c.paths.solutions = solutions.clone();
            }
            if ground_truth.is_some() {
                c.paths.ground_truth = ground_truth.clone();
            }
            (common, c, evaluate)
        }
        Command::BenchConvergence {
            common,
            representations,
            max_iters,
            runs,
        } => {
            let mut c = resolve(common)?;
            if representations.is_some() {
                c.paths.representations = representations.clone();
            }
            set_opt(&mut c.sampler.max_iters, *max_iters);
            set_opt(&mut c.runs, *runs);
            (common, c, bench_convergence)
        }
        Command::Synth {
            common,
            n_clusters,
            per_cluster,
            noise,
        } => {
            let mut c = resolve(common)?;
            set_opt(&mut c.synth.n_clusters, *n_clusters);
            set_opt(&mut c.synth.per_cluster, *per_cluster);
            set_opt(&mut c.synth.noise, *noise);
            (common, c, synth)
        }
    };
    prepare_out(&common.out, &config)?;
    action(&config, &common.out)
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{WORKERS_ENV}={v:?} is not a worker count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Entry point of the `cswc` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match configure_workers().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
