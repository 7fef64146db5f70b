mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use pubc_core::synth::MixKind;

use crate::config::{read_config_file, Method, RunConfig};

#[derive(Parser)]
#[command(name = "pubc", version, about = "Expert-trajectory filtering and behavioral cloning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    GenData {
        /// E, E+E, E+W, E+N or E+E+W+N.
        #[arg(value_parser = parse_kind)]
        kind: MixKind,
        /// Trajectories per source policy.
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Identify expert trajectories in a dataset.
    Filter {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a cloning policy on a dataset or a selected subset.
    TrainBc {
        dataset: PathBuf,
        /// Positive-id list written by `filter`.
        #[arg(long)]
        membership: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Roll out a policy and score it.
    Eval {
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t = EnvKind::PointMass)]
        env: EnvKind,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Collect filter and eval outputs of several run directories into one CSV.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnvKind {
    PointMass,
}

/// Settings shared by the pipeline commands. Flags override the config file.
#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// key=value file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Same as `--method naive`.
    #[arg(long)]
    naive: bool,
    /// Seed-positive fraction, or the kept fraction with `--naive`.
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Ensemble size.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    poly_order: Option<usize>,
    /// Classifier epochs per iteration for `filter`, cloning epochs for `train-bc`.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Source label counted as expert when scoring against ground truth.
    #[arg(long)]
    expert_label: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    score_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    score_max: Option<f64>,
}

fn parse_kind(s: &str) -> Result<MixKind, String> {
    s.parse().map_err(|e: pubc_core::synth::SynthError| e.to_string())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EpochsTarget {
    Filter,
    Bc,
}

impl Common {
    fn resolve(&self, epochs_target: EpochsTarget) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            read_config_file(path, &mut c).map_err(CliError::Usage)?;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(m) = self.method {
            c.method = m;
        }
        if self.naive {
            c.method = Method::Naive;
        }
        if let Some(v) = self.top_fraction {
            if c.method == Method::Naive {
                c.naive_fraction = v;
            } else {
                c.filter.seed_fraction = v;
            }
        }
        if let Some(v) = self.k {
            c.filter.ensemble_size = v;
        }
        if let Some(v) = self.poly_order {
            c.filter.poly_order = v;
        }
        if let Some(v) = self.epochs {
            match epochs_target {
                EpochsTarget::Filter => c.filter.train.epochs = v,
                EpochsTarget::Bc => c.bc.epochs = v,
            }
        }
        if let Some(v) = self.max_iters {
            c.filter.max_iterations = v;
        }
        if let Some(v) = self.tolerance {
            c.filter.tolerance = v;
        }
        if let Some(v) = &self.expert_label {
            c.expert_label = v.clone();
        }
        if let Some(v) = self.episodes {
            c.episodes = v;
        }
        if let Some(v) = self.score_min {
            c.score_min = Some(v);
        }
        if let Some(v) = self.score_max {
            c.score_max = Some(v);
        }
        c.filter.train.loss = c.loss();
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Pipeline(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Pipeline(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Pipeline(m) => m,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { kind, count, out, common } => {
            commands::gen_data(kind, count, &out, &common.resolve(EpochsTarget::Filter)?)
        }
        Command::Filter { dataset, out, common } => {
            commands::filter(&dataset, &out, &common.resolve(EpochsTarget::Filter)?)
        }
        Command::TrainBc {
            dataset,
            membership,
            out,
            common,
        } => commands::train_bc(&dataset, membership.as_deref(), &out, &common.resolve(EpochsTarget::Bc)?),
        Command::Eval { policy, env, out, common } => {
            let EnvKind::PointMass = env;
            commands::eval(&policy, &out, &common.resolve(EpochsTarget::Bc)?)
        }
        Command::Report { runs, out } => commands::report(&runs, out.as_deref()),
    }
}

/// Usage of the named subcommand, or of the whole tool.
fn usage_for(verb: Option<&str>) -> String {
    let mut root = Cli::command();
    root.build();
    let usage = verb
        .and_then(|v| root.find_subcommand_mut(v))
        .map(|c| c.render_usage().to_string());
    usage.unwrap_or_else(|| Cli::command().render_usage().to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
