//! Command-line flags and dispatch.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ngcn::{Combiner, TrainSpec};

use crate::{
    build_spec, execute, plan_depth, plan_perturb, plan_scarcity, plan_sweep, plan_train, DatasetSource,
    ExperimentError, ExperimentReport, ModelChoice, ModelKind, Result, ShapeOptions,
};

#[derive(Debug, Parser)]
#[command(name = "ngcn", version, about = "Train and evaluate networks of graph convolution modules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Repeated seeded runs of one model.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Grid over walk groups K and replicas r.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// K values of the grid.
        #[arg(long = "K-list", value_delimiter = ',', default_values_t = vec![1, 2, 3, 4, 5, 6])]
        k_list: Vec<usize>,
        /// r values of the grid.
        #[arg(long = "r-list", value_delimiter = ',', default_values_t = vec![1, 2, 4])]
        r_list: Vec<usize>,
    },
    /// Accuracy under random removal of nonzero features.
    Perturb {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        shape: ShapeArgs,
        /// Models to compare: gcn, sage, dcnn, ngcn_fc, ngcn_a, nsage_fc, nsage_a.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["gcn".to_string(), "ngcn_a".to_string()])]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.4, 0.6, 0.8])]
        fractions: Vec<f64>,
        /// Seed of the first perturbation; defaults to --seed.
        #[arg(long)]
        perturb_seed: Option<u64>,
    },
    /// Accuracy with few training labels per class.
    Scarcity {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec!["nsage_fc".to_string(), "ngcn_a".to_string()])]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 20, 100])]
        per_class: Vec<usize>,
        /// Seed of the first label draw; defaults to --seed.
        #[arg(long)]
        perturb_seed: Option<u64>,
    },
    /// GCN and SAGE baselines with more hidden layers.
    Depth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec!["gcn".to_string(), "sage".to_string()])]
        models: Vec<String>,
        /// Numbers of hidden layers.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
        depths: Vec<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `sbm-smoke`, or a directory name under $NGCN_DATA_DIR.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeded runs per setting; 20 for train and sweep, 10 otherwise.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV summary path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl CommonArgs {
    pub fn train_spec(&self, default_runs: usize) -> TrainSpec {
        TrainSpec {
            lr: self.lr,
            steps: self.steps,
            dropout: self.dropout,
            l2_coeff: self.l2,
            seed: self.seed,
            runs: self.runs.unwrap_or(default_runs),
            loss_kind: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelFlag {
    Gcn,
    Sage,
    Dcnn,
    Ngcn,
    Nsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CombinerFlag {
    Fc,
    Attn,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    /// Walk groups (powers) of network models.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Replicas per walk group.
    #[arg(long = "r")]
    pub r: Option<usize>,
    /// Layers per module.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Per-module cross-entropy terms (attention combiner only).
    #[arg(long)]
    pub intermediate_supervision: bool,
}

impl ShapeArgs {
    fn options(&self) -> ShapeOptions {
        ShapeOptions {
            k: self.k,
            r: self.r,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            intermediate_supervision: self.intermediate_supervision,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelFlag::Ngcn)]
    pub model: ModelFlag,
    #[arg(long, value_enum, default_value_t = CombinerFlag::Fc)]
    pub combiner: CombinerFlag,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

impl ModelArgs {
    fn choice(&self) -> ModelChoice {
        let kind = match self.model {
            ModelFlag::Gcn => ModelKind::Gcn,
            ModelFlag::Sage => ModelKind::Sage,
            ModelFlag::Dcnn => ModelKind::Dcnn,
            ModelFlag::Ngcn => ModelKind::Ngcn,
            ModelFlag::Nsage => ModelKind::Nsage,
        };
        let combiner = match self.combiner {
            CombinerFlag::Fc => Combiner::Fc,
            CombinerFlag::Attn => Combiner::Attention,
        };
        ModelChoice { kind, combiner }
    }
}

fn parse_models(names: &[String], shape: &ShapeOptions) -> Result<Vec<(String, ngcn::ModelSpec)>> {
    names
        .iter()
        .map(|name| {
            let choice = ModelChoice::parse(name).ok_or_else(|| ExperimentError::Usage(format!("unknown model '{name}'")))?;
            // Shape flags only reach the models they make sense for.
            let shape = match choice.kind {
                ModelKind::Gcn | ModelKind::Sage => ShapeOptions {
                    k: None,
                    r: None,
                    intermediate_supervision: false,
                    ..shape.clone()
                },
                ModelKind::Dcnn => ShapeOptions {
                    r: None,
                    intermediate_supervision: false,
                    ..shape.clone()
                },
                ModelKind::Ngcn | ModelKind::Nsage => ShapeOptions {
                    intermediate_supervision: shape.intermediate_supervision && choice.combiner == Combiner::Attention,
                    ..shape.clone()
                },
            };
            Ok((choice.label(), build_spec(choice, &shape)?))
        })
        .collect()
}

/// Builds and runs the command, returning the report without writing it.
pub fn run(command: &Command) -> Result<(ExperimentReport, &CommonArgs)> {
    let (plan, common, ts) = match command {
        Command::Train { common, model } => {
            let ts = common.train_spec(20);
            let choice = model.choice();
            let spec = build_spec(choice, &model.shape.options())?;
            (plan_train(spec, choice.label(), &ts), common, ts)
        }
        Command::Sweep {
            common,
            model,
            k_list,
            r_list,
        } => {
            let ts = common.train_spec(20);
            (plan_sweep(model.choice(), &model.shape.options(), k_list, r_list, &ts)?, common, ts)
        }
        Command::Perturb {
            common,
            shape,
            models,
            fractions,
            perturb_seed,
        } => {
            let ts = common.train_spec(10);
            let models = parse_models(models, &shape.options())?;
            (plan_perturb(&models, fractions, &ts, perturb_seed.unwrap_or(common.seed))?, common, ts)
        }
        Command::Scarcity {
            common,
            shape,
            models,
            per_class,
            perturb_seed,
        } => {
            let ts = common.train_spec(10);
            let models = parse_models(models, &shape.options())?;
            (plan_scarcity(&models, per_class, &ts, perturb_seed.unwrap_or(common.seed))?, common, ts)
        }
        Command::Depth { common, models, depths } => {
            let ts = common.train_spec(10);
            let kinds = models
                .iter()
                .map(|m| ModelKind::parse(m).ok_or_else(|| ExperimentError::Usage(format!("unknown model '{m}'"))))
                .collect::<Result<Vec<_>>>()?;
            (plan_depth(&kinds, depths, &ts)?, common, ts)
        }
    };
    ts.validate()?;
    if common.jobs == 0 {
        return Err(ExperimentError::Usage("--jobs must be at least 1".into()));
    }
    let source = DatasetSource::resolve(common.dataset.as_deref(), common.dataset_dir.as_deref())?;
    let (dataset, echo) = source.load()?;
    let report = execute(plan, &dataset, echo, &ts, common.jobs)?;
    Ok((report, common))
}

/// Writes the JSON report to `--out` (or stdout) and the CSV to `--csv`.
pub fn write_outputs(report: &ExperimentReport, common: &CommonArgs) -> Result<()> {
    let io = |path: &PathBuf, e: std::io::Error| ExperimentError::Run(ngcn::Error::Io { path: path.display().to_string(), source: e });
    let json = report.to_json();
    match &common.out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| io(path, e))?,
        None => println!("{json}"),
    }
    if let Some(path) = &common.csv {
        fs::write(path, report.to_csv()).map_err(|e| io(path, e))?;
    }
    Ok(())
}
