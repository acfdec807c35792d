//! Command-line orchestration: dataset generation, ground-truth precomputation,
//! training, evaluation and self-checks.

mod check;
mod commands;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{DpxError, Result};
use crate::inner_solver::BoxSolveConfig;
use crate::neural::OptimizerKind;
use crate::problems::Mode;
use crate::training::{GradReduction, Method, TrainConfig};

pub use check::{check_names, run_checks, CheckOptions, CheckResult, Fault};
pub use commands::{cmd_check, cmd_eval, cmd_gen_data, cmd_oracle, cmd_train, final_rho, TrainOutcome};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.dpxm";
pub const CONFIG_FILE: &str = "config.json";

/// Everything a training run needs, loadable from one JSON document. Missing
/// keys take their defaults; `learning_rate` and `optimizer` default per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub ground_truth: PathBuf,
    pub output_dir: PathBuf,
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub reduction: GradReduction,
    pub rho0: f64,
    pub gamma: f64,
    pub rho_max: f64,
    pub seed: u64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    pub eval_every: usize,
    pub threads: Option<usize>,
    pub strict_serial: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::new(Method::DeepAlm);
        Self {
            dataset: PathBuf::from("dataset.dpx"),
            ground_truth: PathBuf::from("ground_truth.dpxg"),
            output_dir: PathBuf::from("run"),
            method: t.method,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: None,
            optimizer: None,
            reduction: t.reduction,
            rho0: t.rho0,
            gamma: t.gamma,
            rho_max: t.rho_max,
            seed: t.seed,
            hidden_width: t.hidden_width,
            hidden_layers: t.hidden_layers,
            inner_max_iters: t.inner.max_iters,
            inner_tol: t.inner.grad_tol,
            eval_every: 1,
            threads: None,
            strict_serial: false,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(DpxError::InvalidArgument("eval_every must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(DpxError::InvalidArgument("threads must be at least 1".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::new(self.method);
        TrainConfig {
            method: self.method,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            optimizer: self.optimizer.unwrap_or(base.optimizer),
            reduction: self.reduction,
            rho0: self.rho0,
            gamma: self.gamma,
            rho_max: self.rho_max,
            seed: self.seed,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            inner: BoxSolveConfig {
                max_iters: self.inner_max_iters,
                grad_tol: self.inner_tol,
                ..base.inner
            },
            strict_serial: self.strict_serial,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dpx", version, about = "Train and evaluate dual-prediction proxy solvers")]
pub struct Cli {
    /// Worker threads for per-instance work.
    #[arg(long, global = true, env = "DPX_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a problem family and a dataset of cost vectors.
    GenData(GenDataArgs),
    /// Precompute certified ground-truth solutions.
    Oracle(OracleArgs),
    /// Train a dual predictor.
    Train(TrainArgs),
    /// Evaluate a saved model on the test split.
    Eval(EvalArgs),
    /// Run the finite-difference and oracle self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
    pub low: f64,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub high: f64,
    /// Seed for the cost-vector draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the family matrices; defaults to `--seed`.
    #[arg(long)]
    pub family_seed: Option<u64>,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value = "convex-qp", value_parser = parse_mode)]
    pub mode: Mode,
    /// Also export the instances as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, short)]
    pub dataset: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Refuse the dataset unless its hash equals this value.
    #[arg(long)]
    pub dataset_hash: Option<String>,
    /// Solve the training split as well as the test split.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub strict_serial: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags below override its values.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, value_enum)]
    pub reduction: Option<ReductionArg>,
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub strict_serial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    Mean,
    Sum,
}

impl From<ReductionArg> for GradReduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Mean => GradReduction::Mean,
            ReductionArg::Sum => GradReduction::Sum,
        }
    }
}

impl TrainArgs {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        apply!(dataset, ground_truth, method, epochs, batch_size, rho0, gamma, rho_max, seed, hidden_width, hidden_layers, eval_every);
        if let Some(dir) = &self.out_dir {
            cfg.output_dir = dir.clone();
        }
        if self.learning_rate.is_some() {
            cfg.learning_rate = self.learning_rate;
        }
        if self.optimizer.is_some() {
            cfg.optimizer = self.optimizer;
        }
        if let Some(r) = self.reduction {
            cfg.reduction = r.into();
        }
        cfg.strict_serial |= self.strict_serial;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Run configuration, normally the `config.json` written by `train`.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Model file; defaults to the one in the run's output directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Penalty for Deep ALM recovery; defaults to the final training penalty.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Write the metrics row here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strict_serial: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CheckArgs {
    /// Smaller problem counts; finishes in well under a minute.
    #[arg(long)]
    pub quick: bool,
    /// Deliberately break one component to confirm the checks notice.
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: DpxError| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: DpxError| e.to_string())
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    s.parse().map_err(|e: DpxError| e.to_string())
}

/// Sizes the global worker pool. A pool can only be installed once per
/// process; later requests are logged and ignored.
pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(DpxError::InvalidArgument("threads must be at least 1".into()));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::warn!("worker pool already configured: {e}");
    }
    Ok(())
}

/// Dispatches a parsed command line. `Ok(false)` means the command ran but
/// reported failures (only `check` does this).
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(args) => {
            configure_threads(cli.threads)?;
            let hash = cmd_gen_data(&args)?;
            println!("{hash}");
            Ok(true)
        }
        Command::Oracle(args) => {
            configure_threads(cli.threads)?;
            let hash = cmd_oracle(&args)?;
            println!("{hash}");
            Ok(true)
        }
        Command::Train(args) => {
            let mut cfg = args.resolve()?;
            if cli.threads.is_some() {
                cfg.threads = cli.threads;
            }
            configure_threads(cfg.threads)?;
            let outcome = cmd_train(&cfg)?;
            if let Some(last) = outcome.history.last() {
                println!(
                    "epoch {}: dual gap {:.4e}, equality residual {:.4e}, solution residual {:.4e}",
                    last.epoch, last.dual_gap_mean, last.eq_res_mean, last.sol_res_mean
                );
            }
            println!("{}", outcome.metrics_path.display());
            Ok(true)
        }
        Command::Eval(args) => {
            configure_threads(cli.threads)?;
            cmd_eval(&args)?;
            Ok(true)
        }
        Command::Check(args) => {
            configure_threads(cli.threads)?;
            Ok(cmd_check(&args))
        }
    }
}
