//! Experiment harness for `ngcn`: repeated seeded training runs, grids over
//! network shape, feature-removal and label-scarcity perturbations, and
//! deeper baselines. Every command produces an [`ExperimentReport`].

pub mod cli;
pub mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ngcn::data::{generate_sbm, load_dataset, remove_features, sbm_smoke, subsample_train_labels};
use ngcn::models::ModelInputs;
use ngcn::training::train_prepared;
use ngcn::{Combiner, Dataset, ModelSpec, TrainSpec};
use rayon::prelude::*;

pub use report::{
    attention_by_power, mean_std, DatasetEcho, Entry, ExperimentReport, RunRecord, Setting, Summary, Timing,
    REPORT_VERSION,
};

pub const SBM_SMOKE: &str = "sbm-smoke";
pub const DATA_DIR_ENV: &str = "NGCN_DATA_DIR";

/// Network defaults when `--K` / `--r` are not given.
pub const DEFAULT_K: usize = 6;
pub const DEFAULT_R: usize = 4;

#[derive(Debug)]
pub enum ExperimentError {
    /// Flags that cannot describe a valid experiment.
    Usage(String),
    /// The experiment was valid but could not be carried out.
    Run(ngcn::Error),
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::Usage(m) => write!(f, "{m}"),
            ExperimentError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl From<ngcn::Error> for ExperimentError {
    fn from(e: ngcn::Error) -> Self {
        match e {
            ngcn::Error::Config(m) => ExperimentError::Usage(m),
            other => ExperimentError::Run(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(ExperimentError::Usage(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    Sage,
    Dcnn,
    Ngcn,
    Nsage,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gcn" => ModelKind::Gcn,
            "sage" => ModelKind::Sage,
            "dcnn" => ModelKind::Dcnn,
            "ngcn" => ModelKind::Ngcn,
            "nsage" => ModelKind::Nsage,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Dcnn => "dcnn",
            ModelKind::Ngcn => "ngcn",
            ModelKind::Nsage => "nsage",
        }
    }
}

/// A model family plus the combiner for network families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelChoice {
    pub kind: ModelKind,
    pub combiner: Combiner,
}

impl ModelChoice {
    /// Accepts `gcn`, `sage`, `dcnn`, and `ngcn` / `nsage` with an `_fc` or
    /// `_a` suffix.
    pub fn parse(s: &str) -> Option<Self> {
        let (name, combiner) = match s.split_once('_') {
            Some((name, "fc")) => (name, Combiner::Fc),
            Some((name, "a" | "attn")) => (name, Combiner::Attention),
            Some(_) => return None,
            None => (s, Combiner::Fc),
        };
        let kind = ModelKind::parse(name)?;
        let networked = matches!(kind, ModelKind::Ngcn | ModelKind::Nsage);
        if networked != s.contains('_') {
            return None;
        }
        Some(Self { kind, combiner })
    }

    pub fn label(&self) -> String {
        match (self.kind, self.combiner) {
            (ModelKind::Ngcn | ModelKind::Nsage, Combiner::Attention) => format!("{}_a", self.kind.name()),
            (ModelKind::Ngcn | ModelKind::Nsage, _) => format!("{}_fc", self.kind.name()),
            (kind, _) => kind.name().to_string(),
        }
    }
}

/// Shape flags shared by all commands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeOptions {
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub intermediate_supervision: bool,
}

pub fn build_spec(choice: ModelChoice, shape: &ShapeOptions) -> Result<ModelSpec> {
    let k = shape.k.unwrap_or(DEFAULT_K);
    let r = shape.r.unwrap_or(DEFAULT_R);
    let mut spec = match choice.kind {
        ModelKind::Gcn | ModelKind::Sage => {
            if shape.k.unwrap_or(1) != 1 || shape.r.unwrap_or(1) != 1 {
                return usage(format!("{} is a single module; use --K 1 --r 1 or a network model", choice.kind.name()));
            }
            if choice.kind == ModelKind::Gcn {
                ModelSpec::gcn()
            } else {
                ModelSpec::sage()
            }
        }
        ModelKind::Dcnn => {
            if shape.r.unwrap_or(1) != 1 {
                return usage("dcnn uses one channel per power; --r must be 1");
            }
            ModelSpec::dcnn(k)
        }
        ModelKind::Ngcn => ModelSpec::ngcn(k, r, choice.combiner),
        ModelKind::Nsage => ModelSpec::nsage(k, r, choice.combiner),
    };
    if let Some(layers) = shape.layers {
        spec.layers = layers;
    }
    if let Some(hidden) = shape.hidden_dim {
        spec.hidden_dim = hidden;
    }
    if shape.intermediate_supervision {
        if spec.combiner != Combiner::Attention {
            return usage("--intermediate-supervision needs the attention combiner");
        }
        spec.intermediate_supervision = true;
    }
    Ok(spec)
}

/// Where to load a dataset from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Built-in synthetic graph.
    SbmSmoke,
    /// Dataset directory.
    Dir(PathBuf),
}

impl DatasetSource {
    /// `name` is `sbm-smoke` or a subdirectory of `$NGCN_DATA_DIR`.
    pub fn resolve(name: Option<&str>, dir: Option<&Path>) -> Result<Self> {
        match (name, dir) {
            (Some(_), Some(_)) => usage("--dataset and --dataset-dir are mutually exclusive"),
            (None, None) => usage("one of --dataset or --dataset-dir is required"),
            (None, Some(dir)) => Ok(DatasetSource::Dir(dir.to_path_buf())),
            (Some(SBM_SMOKE), None) => Ok(DatasetSource::SbmSmoke),
            (Some(name), None) => match std::env::var_os(DATA_DIR_ENV) {
                Some(root) => Ok(DatasetSource::Dir(Path::new(&root).join(name))),
                None => Err(ExperimentError::Run(ngcn::Error::Config(format!(
                    "dataset '{name}' is not built in; pass --dataset-dir or set {DATA_DIR_ENV}"
                )))),
            },
        }
    }

    pub fn load(&self) -> Result<(Dataset, String)> {
        match self {
            DatasetSource::SbmSmoke => Ok((generate_sbm(&sbm_smoke()).map_err(ExperimentError::Run)?, SBM_SMOKE.into())),
            DatasetSource::Dir(dir) => {
                let dataset = load_dataset(dir).map_err(ExperimentError::Run)?;
                Ok((dataset, dir.display().to_string()))
            }
        }
    }
}

/// How the dataset is altered before a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    None,
    RemoveFeatures { fraction: f64, seed: u64 },
    SubsampleLabels { per_class: usize, seed: u64 },
}

/// One training run.
#[derive(Debug, Clone)]
pub struct Job {
    pub entry: usize,
    pub seed: u64,
    pub perturbation: Perturbation,
}

/// Runs every job on a pool of `threads` workers and returns results in job
/// order with per-run wall clock.
pub fn run_jobs(
    dataset: &Dataset,
    specs: &[ModelSpec],
    train_spec: &TrainSpec,
    jobs: &[Job],
    threads: usize,
) -> Result<Vec<(RunRecord, f64)>> {
    train_spec.validate()?;
    for spec in specs {
        spec.validate(dataset.num_classes())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ExperimentError::Usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<ngcn::Result<(RunRecord, f64)>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let start = Instant::now();
                let spec = &specs[job.entry];
                let perturbed = match job.perturbation {
                    Perturbation::None => None,
                    Perturbation::RemoveFeatures { fraction, seed } => Some(remove_features(dataset, fraction, seed)?),
                    Perturbation::SubsampleLabels { per_class, seed } => {
                        Some(subsample_train_labels(dataset, per_class, seed)?)
                    }
                };
                let data = perturbed.as_ref().unwrap_or(dataset);
                let inputs = ModelInputs::prepare(data, spec.normalization)?;
                let result = train_prepared(spec, train_spec, data, &inputs, job.seed)?;
                Ok((RunRecord::from(&result), start.elapsed().as_secs_f64()))
            })
            .collect()
    });
    results.into_iter().map(|r| r.map_err(ExperimentError::Run)).collect()
}

/// Entry labels, specs and settings; jobs refer to entries by index.
pub struct Plan {
    pub command: &'static str,
    pub entries: Vec<(String, ModelSpec, Setting)>,
    pub jobs: Vec<Job>,
    pub perturb_seed: Option<u64>,
}

pub fn execute(
    plan: Plan,
    dataset: &Dataset,
    source: String,
    train_spec: &TrainSpec,
    threads: usize,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let specs: Vec<ModelSpec> = plan.entries.iter().map(|(_, s, _)| s.clone()).collect();
    let outcomes = run_jobs(dataset, &specs, train_spec, &plan.jobs, threads)?;
    let mut runs = vec![Vec::new(); plan.entries.len()];
    let mut secs = vec![Vec::new(); plan.entries.len()];
    for (job, (record, t)) in plan.jobs.iter().zip(outcomes) {
        runs[job.entry].push(record);
        secs[job.entry].push(t);
    }
    let entries = plan
        .entries
        .into_iter()
        .zip(runs)
        .map(|((label, model, setting), runs)| {
            let mean_attention_by_power = mean_attention(&model, &runs);
            Entry {
                summary: Summary::of(&runs),
                label,
                model,
                setting,
                runs,
                mean_attention_by_power,
            }
        })
        .collect();
    Ok(ExperimentReport {
        report_version: REPORT_VERSION,
        command: plan.command.to_string(),
        dataset: DatasetEcho {
            source,
            manifest: dataset.manifest(),
        },
        train: train_spec.clone(),
        perturb_seed: plan.perturb_seed,
        entries,
        timing: Timing {
            total_secs: start.elapsed().as_secs_f64(),
            run_secs: secs,
        },
    })
}

fn mean_attention(spec: &ModelSpec, runs: &[RunRecord]) -> Option<Vec<f64>> {
    let per_run: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.attention_at_best.as_ref().map(|m| attention_by_power(spec, m)))
        .collect::<Option<_>>()?;
    let first = per_run.first()?;
    let mut mean = vec![0.0; first.len()];
    for m in &per_run {
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v / per_run.len() as f64;
        }
    }
    Some(mean)
}

fn seeded_jobs(entry: usize, train_spec: &TrainSpec, perturbation: impl Fn(usize) -> Perturbation) -> Vec<Job> {
    (0..train_spec.runs)
        .map(|i| Job {
            entry,
            seed: train_spec.run_seed(i),
            perturbation: perturbation(i),
        })
        .collect()
}

/// `--runs` seeded runs of one model.
pub fn plan_train(spec: ModelSpec, label: String, train_spec: &TrainSpec) -> Plan {
    Plan {
        command: "train",
        entries: vec![(label, spec, Setting::default())],
        jobs: seeded_jobs(0, train_spec, |_| Perturbation::None),
        perturb_seed: None,
    }
}

/// Every `(K, r)` cell of the grid, K-major.
pub fn plan_sweep(choice: ModelChoice, shape: &ShapeOptions, ks: &[usize], rs: &[usize], train_spec: &TrainSpec) -> Result<Plan> {
    if ks.is_empty() || rs.is_empty() {
        return usage("sweep needs at least one K and one r");
    }
    let mut entries = Vec::new();
    let mut jobs = Vec::new();
    for &k in ks {
        for &r in rs {
            let cell = ShapeOptions {
                k: Some(k),
                r: Some(r),
                ..shape.clone()
            };
            let spec = build_spec(choice, &cell)?;
            jobs.extend(seeded_jobs(entries.len(), train_spec, |_| Perturbation::None));
            entries.push((format!("{} K={k} r={r}", choice.label()), spec, Setting::default()));
        }
    }
    Ok(Plan {
        command: "sweep",
        entries,
        jobs,
        perturb_seed: None,
    })
}

/// Feature removal. Run `i` of every model removes with seed
/// `perturb_seed + i` and trains with `train_spec.run_seed(i)`.
pub fn plan_perturb(
    models: &[(String, ModelSpec)],
    fractions: &[f64],
    train_spec: &TrainSpec,
    perturb_seed: u64,
) -> Result<Plan> {
    if models.is_empty() || fractions.is_empty() {
        return usage("perturb needs at least one model and one fraction");
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return usage(format!("removal fraction {f} outside [0, 1]"));
    }
    let mut entries = Vec::new();
    let mut jobs = Vec::new();
    for &fraction in fractions {
        for (label, spec) in models {
            jobs.extend(seeded_jobs(entries.len(), train_spec, |i| Perturbation::RemoveFeatures {
                fraction,
                seed: perturb_seed.wrapping_add(i as u64),
            }));
            let setting = Setting {
                removal_fraction: Some(fraction),
                ..Setting::default()
            };
            entries.push((label.clone(), spec.clone(), setting));
        }
    }
    Ok(Plan {
        command: "perturb",
        entries,
        jobs,
        perturb_seed: Some(perturb_seed),
    })
}

/// Label scarcity. Run `i` of every model draws its training labels with
/// seed `perturb_seed + i`.
pub fn plan_scarcity(
    models: &[(String, ModelSpec)],
    per_class: &[usize],
    train_spec: &TrainSpec,
    perturb_seed: u64,
) -> Result<Plan> {
    if models.is_empty() || per_class.is_empty() {
        return usage("scarcity needs at least one model and one per-class count");
    }
    let mut entries = Vec::new();
    let mut jobs = Vec::new();
    for &count in per_class {
        for (label, spec) in models {
            jobs.extend(seeded_jobs(entries.len(), train_spec, |i| Perturbation::SubsampleLabels {
                per_class: count,
                seed: perturb_seed.wrapping_add(i as u64),
            }));
            let setting = Setting {
                labels_per_class: Some(count),
                ..Setting::default()
            };
            entries.push((label.clone(), spec.clone(), setting));
        }
    }
    Ok(Plan {
        command: "scarcity",
        entries,
        jobs,
        perturb_seed: Some(perturb_seed),
    })
}

/// Width of every hidden layer in the depth study.
pub const DEPTH_WIDTH: usize = 64;

/// Baselines with `depth` hidden layers of width [`DEPTH_WIDTH`].
pub fn plan_depth(kinds: &[ModelKind], depths: &[usize], train_spec: &TrainSpec) -> Result<Plan> {
    if kinds.is_empty() || depths.is_empty() {
        return usage("depth needs at least one model and one depth");
    }
    let mut entries = Vec::new();
    let mut jobs = Vec::new();
    for &kind in kinds {
        let base = match kind {
            ModelKind::Gcn => ModelSpec::gcn(),
            ModelKind::Sage => ModelSpec::sage(),
            other => return usage(format!("depth compares gcn and sage baselines, not {}", other.name())),
        };
        for &depth in depths {
            if depth == 0 {
                return usage("depth counts hidden layers and must be at least 1");
            }
            let spec = ModelSpec {
                layers: depth + 1,
                hidden_dim: DEPTH_WIDTH,
                ..base.clone()
            };
            let dims = vec![DEPTH_WIDTH.to_string(); depth].join("x");
            jobs.extend(seeded_jobs(entries.len(), train_spec, |_| Perturbation::None));
            let setting = Setting {
                hidden_layers: Some(depth),
                ..Setting::default()
            };
            entries.push((format!("{} {dims}xC", kind.name()), spec, setting));
        }
    }
    Ok(Plan {
        command: "depth",
        entries,
        jobs,
        perturb_seed: None,
    })
}
