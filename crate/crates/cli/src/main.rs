//! `omerf` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omerf::omerf::OffsetSource;
use omerf::persist::ModelKind;

use commands::{CliError, CliResult, EvaluateArgs};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "omerf", version, about = "Ordinal mixed-effects random forests")]
struct Cli {
    /// Master seed (simulation, forests, benchmark replications).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file or a previous run's manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Clm,
    Clmm,
    #[value(name = "ordforest-init")]
    OrdforestInit,
    Omerf,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Clm => ModelKind::Clm,
            ModelArg::Clmm => ModelKind::Clmm,
            ModelArg::OrdforestInit => ModelKind::OrdforestInit,
            ModelArg::Omerf => ModelKind::Omerf,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OffsetArg {
    Oob,
    InSample,
}

/// Forest and OMERF loop settings shared by `fit` and `benchmark`.
#[derive(Args, Debug, Default)]
struct OmerfFlags {
    #[arg(long)]
    toll: Option<f64>,
    #[arg(long)]
    itmax: Option<usize>,
    #[arg(long)]
    num_trees: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    min_node_size: Option<usize>,
    /// Forest predictions used as the mixed-model offset.
    #[arg(long, value_enum)]
    offset_source: Option<OffsetArg>,
}

impl OmerfFlags {
    fn apply(&self, cfg: &mut omerf::omerf::OmerfConfig) {
        if let Some(v) = self.toll {
            cfg.toll = v;
        }
        if let Some(v) = self.itmax {
            cfg.itmax = v;
        }
        if let Some(v) = self.num_trees {
            cfg.forest_config.num_trees = v;
        }
        if self.mtry.is_some() {
            cfg.forest_config.mtry = self.mtry;
        }
        if let Some(v) = self.min_node_size {
            cfg.forest_config.min_node_size = v;
        }
        if let Some(v) = self.offset_source {
            cfg.offset_source = match v {
                OffsetArg::Oob => OffsetSource::Oob,
                OffsetArg::InSample => OffsetSource::InSample,
            };
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one simulated dataset with its truth and train/test split.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=10))]
        dgp: Option<u32>,
        #[arg(long)]
        n_groups: Option<usize>,
        #[arg(long)]
        n_per_group: Option<usize>,
        #[arg(long)]
        categories: Option<u32>,
    },
    /// Fit a model to a CSV file.
    Fit {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[command(flatten)]
        omerf: OmerfFlags,
    },
    /// Class probabilities and predicted classes for new rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the schema stored in the model file.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Accuracy, MSE, ARI and kappa against the labels in `--data`.
    Evaluate {
        #[arg(long, conflicts_with = "predictions")]
        model: Option<PathBuf>,
        /// A predictions CSV with a `class` column instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Replicated simulation study; writes per-replication and aggregated CSV.
    Benchmark {
        /// Comma-separated design ids.
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..=10))]
        dgps: Option<Vec<u32>>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long, value_delimiter = ',', value_enum)]
        models: Option<Vec<ModelArg>>,
        #[arg(long)]
        train_ratio: Option<f64>,
        /// Also record the importance rank of the last covariate for OMERF.
        #[arg(long)]
        importance: bool,
        #[command(flatten)]
        omerf: OmerfFlags,
    },
    /// Importance, partial dependence and random-effect tables.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// The training data of the model.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed).or(Some(0));
    cfg.threads = cli.threads.or(cfg.threads);
    cfg.out = Some(cli.out.clone().unwrap_or_else(|| cfg.out_dir()));
    match &cli.command {
        Command::Simulate { dgp, n_groups, n_per_group, categories } => {
            let s = &mut cfg.simulate;
            s.dgp = dgp.or(s.dgp);
            s.n_groups = n_groups.unwrap_or(s.n_groups);
            s.n_per_group = n_per_group.unwrap_or(s.n_per_group);
            s.categories = categories.unwrap_or(s.categories);
        }
        Command::Fit { omerf, .. } => omerf.apply(&mut cfg.omerf),
        Command::Benchmark { dgps, replications, models, train_ratio, importance, omerf } => {
            let b = &mut cfg.benchmark;
            if let Some(d) = dgps {
                b.dgps = d.clone();
            }
            if let Some(r) = replications {
                b.replications = *r;
            }
            if let Some(m) = models {
                b.models = m.iter().map(|&k| k.into()).collect();
            }
            if let Some(t) = train_ratio {
                b.train_ratio = *t;
            }
            b.importance |= importance;
            omerf.apply(&mut b.omerf);
            b.master_seed = cfg.seed.unwrap_or(0);
        }
        Command::Explain { grid_points, repeats, .. } => {
            if let Some(g) = grid_points {
                cfg.explain.grid_points = *g;
            }
            if let Some(r) = repeats {
                cfg.explain.importance_repeats = *r;
            }
        }
        Command::Predict { .. } | Command::Evaluate { .. } => {}
    }
    cfg.omerf.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    omerf::par::with_threads(cfg.threads, || match &cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Fit { model, data, schema, .. } => commands::fit(&cfg, (*model).into(), data, schema),
        Command::Predict { model, data, schema } => commands::predict(&cfg, model, data, schema.as_deref()),
        Command::Evaluate { model, predictions, data, schema } => commands::evaluate_cmd(
            &cfg,
            EvaluateArgs {
                model: model.as_deref(),
                predictions: predictions.as_deref(),
                data,
                schema: schema.as_deref(),
            },
        ),
        Command::Benchmark { .. } => commands::benchmark(&cfg),
        Command::Explain { model, data, schema, .. } => commands::explain(&cfg, model, data, schema.as_deref()),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
