//! Flag parsing, config-file merging and validation.
//!
//! Every command has a flag struct whose fields are all optional. A
//! `--config` JSON file uses the same keys; flags given on the command
//! line win over file values, and anything still unset takes its default.
//! The resolved config is what gets written next to the outputs, so it
//! can be passed back through `--config` to repeat a run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uco_core::misalign::DEFAULT_TEMPERATURES;
use uco_core::train::SoftScheme;
use uco_core::Scheme;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "uco", version, about = "Training-test misalignment experiments for unsupervised combinatorial optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bad pairs between the surrogate and hard rounding on random quadratic toys.
    ToyMisalign(ToyMisalignFlags),
    /// Bad pairs between the soft-rounded surrogate and hard rounding across temperatures.
    ToySoft(ToySoftFlags),
    /// Train facility-location decisions through soft rounding across temperatures.
    TrainFl(TrainFlFlags),
    /// Compare recorded gradients against central finite differences.
    GradCheck(GradCheckFlags),
}

/// Fills every `None` field of the flags from the file.
macro_rules! merge_from {
    ($flags:expr, $file:expr; $($field:ident),*) => {{
        let file = $file;
        let mut flags = $flags;
        $(if flags.$field.is_none() { flags.$field = file.$field; })*
        flags
    }};
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyMisalignFlags {
    #[arg(skip)]
    pub command: Option<String>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of binary decisions.
    #[arg(long)]
    pub n: Option<usize>,
    /// Continuous decision vectors per trial.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// iterative, greedy or both.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySoftFlags {
    #[arg(skip)]
    pub command: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// iterative, greedy or both.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Comma-separated soft temperatures.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub temperatures: Option<Vec<f64>>,
    /// Soft-greedy step budget (default 2n).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also draw the mean fraction against temperature as SVG.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plot: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFlFlags {
    #[arg(skip)]
    pub command: Option<String>,
    /// Seeds the instance and the initial noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of locations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Facility budget.
    #[arg(long)]
    pub k: Option<usize>,
    /// Weight of the budget-violation probability.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// soft-iterative, soft-greedy or both.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub temperatures: Option<Vec<f64>>,
    /// Soft-greedy step budget inside the loss (default min(n, 50)).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Initial logit of every decision (default ln(k / (n - k))).
    #[arg(long, allow_negative_numbers = true)]
    pub init_logit: Option<f64>,
    /// Standard deviation of seeded noise on the initial logits.
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Draw train-loss and test-objective panels per soft scheme.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plot: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckFlags {
    #[arg(skip)]
    pub command: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Facility budget.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// quadratic, facility or all.
    #[arg(long)]
    pub problem: Option<String>,
    /// Pipeline in front of the surrogate: none, soft-iterative, soft-greedy or all.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub temperatures: Option<Vec<f64>>,
    /// Soft-greedy step budget (default n).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Random interior points per check.
    #[arg(long)]
    pub points: Option<usize>,
    /// Largest accepted relative error.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// A bare `--plot` means true; `--plot false` is accepted too.
fn plot_flag(v: Option<bool>) -> bool {
    v.unwrap_or(false)
}

fn load_file<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

fn check_command(found: Option<&str>, expected: &str) -> Result<(), CliError> {
    match found {
        Some(c) if c != expected => Err(CliError::Usage(format!("config file is for `{c}`, not `{expected}`"))),
        _ => Ok(()),
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn at_least(name: &str, v: usize, min: usize) -> Result<usize, CliError> {
    if v < min {
        return usage(format!("--{name} must be at least {min}, got {v}"));
    }
    Ok(v)
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return usage(format!("--{name} must be positive and finite, got {v}"));
    }
    Ok(v)
}

fn temperatures(v: Option<Vec<f64>>, default: &[f64]) -> Result<Vec<f64>, CliError> {
    let temps = v.unwrap_or_else(|| default.to_vec());
    if temps.is_empty() {
        return usage("--temperatures needs at least one value");
    }
    for &t in &temps {
        positive("temperatures", t)?;
    }
    Ok(temps)
}

fn jobs(v: Option<usize>) -> Result<usize, CliError> {
    match v {
        Some(j) => at_least("jobs", j, 1),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// `iterative`, `greedy` or `both`.
pub fn toy_schemes(s: &str) -> Result<Vec<Scheme>, CliError> {
    match s {
        "both" => Ok(vec![Scheme::Iterative, Scheme::Greedy]),
        "iterative" => Ok(vec![Scheme::Iterative]),
        "greedy" => Ok(vec![Scheme::Greedy]),
        other => usage(format!("--scheme must be iterative, greedy or both, got {other:?}")),
    }
}

/// `soft-iterative`, `soft-greedy` or `both`.
pub fn train_schemes(s: &str) -> Result<Vec<SoftScheme>, CliError> {
    match s {
        "both" => Ok(vec![SoftScheme::SoftIterative, SoftScheme::SoftGreedy]),
        "soft-iterative" => Ok(vec![SoftScheme::SoftIterative]),
        "soft-greedy" => Ok(vec![SoftScheme::SoftGreedy]),
        other => usage(format!("--scheme must be soft-iterative, soft-greedy or both, got {other:?}")),
    }
}

/// `none`, `soft-iterative`, `soft-greedy` or `all`.
pub fn pipelines(s: &str) -> Result<Vec<SoftScheme>, CliError> {
    match s {
        "all" => Ok(vec![SoftScheme::None, SoftScheme::SoftIterative, SoftScheme::SoftGreedy]),
        "none" => Ok(vec![SoftScheme::None]),
        "soft-iterative" => Ok(vec![SoftScheme::SoftIterative]),
        "soft-greedy" => Ok(vec![SoftScheme::SoftGreedy]),
        other => usage(format!("--scheme must be none, soft-iterative, soft-greedy or all, got {other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Quadratic,
    Facility,
}

pub fn problems(s: &str) -> Result<Vec<ProblemKind>, CliError> {
    match s {
        "all" => Ok(vec![ProblemKind::Quadratic, ProblemKind::Facility]),
        "quadratic" => Ok(vec![ProblemKind::Quadratic]),
        "facility" => Ok(vec![ProblemKind::Facility]),
        other => usage(format!("--problem must be quadratic, facility or all, got {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMisalignConfig {
    pub command: String,
    pub seed: u64,
    pub n: usize,
    pub samples: usize,
    pub trials: usize,
    pub scheme: String,
    pub jobs: usize,
    pub out: PathBuf,
}

impl ToyMisalignConfig {
    pub fn resolve(flags: ToyMisalignFlags) -> Result<Self, CliError> {
        let file: ToyMisalignFlags = load_file(flags.config.as_deref())?;
        check_command(file.command.as_deref(), "toy-misalign")?;
        let f = merge_from!(flags, file; seed, n, samples, trials, scheme, jobs, out);
        let cfg = ToyMisalignConfig {
            command: "toy-misalign".into(),
            seed: f.seed.unwrap_or(0),
            n: at_least("n", f.n.unwrap_or(50), 1)?,
            samples: at_least("samples", f.samples.unwrap_or(100), 1)?,
            trials: at_least("trials", f.trials.unwrap_or(5), 1)?,
            scheme: f.scheme.unwrap_or_else(|| "both".into()),
            jobs: jobs(f.jobs)?,
            out: f.out.unwrap_or_else(default_out),
        };
        toy_schemes(&cfg.scheme)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySoftConfig {
    pub command: String,
    pub seed: u64,
    pub n: usize,
    pub samples: usize,
    pub trials: usize,
    pub scheme: String,
    pub temperatures: Vec<f64>,
    pub steps: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub plot: bool,
}

impl ToySoftConfig {
    pub fn resolve(flags: ToySoftFlags) -> Result<Self, CliError> {
        let file: ToySoftFlags = load_file(flags.config.as_deref())?;
        check_command(file.command.as_deref(), "toy-soft")?;
        let f = merge_from!(flags, file; seed, n, samples, trials, scheme, temperatures, steps, jobs, out, plot);
        let n = at_least("n", f.n.unwrap_or(50), 1)?;
        let cfg = ToySoftConfig {
            command: "toy-soft".into(),
            seed: f.seed.unwrap_or(0),
            n,
            samples: at_least("samples", f.samples.unwrap_or(100), 1)?,
            trials: at_least("trials", f.trials.unwrap_or(5), 1)?,
            scheme: f.scheme.unwrap_or_else(|| "both".into()),
            temperatures: temperatures(f.temperatures, &DEFAULT_TEMPERATURES)?,
            steps: at_least("steps", f.steps.unwrap_or(2 * n), 1)?,
            jobs: jobs(f.jobs)?,
            out: f.out.unwrap_or_else(default_out),
            plot: plot_flag(f.plot),
        };
        toy_schemes(&cfg.scheme)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFlConfig {
    pub command: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub scheme: String,
    pub temperatures: Vec<f64>,
    pub steps: usize,
    pub init_logit: f64,
    pub init_scale: f64,
    pub jobs: usize,
    pub out: PathBuf,
    pub plot: bool,
}

/// Default facility-location penalty weight.
pub const DEFAULT_BETA: f64 = 10.0;

impl TrainFlConfig {
    pub fn resolve(flags: TrainFlFlags) -> Result<Self, CliError> {
        let file: TrainFlFlags = load_file(flags.config.as_deref())?;
        check_command(file.command.as_deref(), "train-fl")?;
        let f = merge_from!(flags, file; seed, n, k, beta, epochs, lr, scheme, temperatures, steps, init_logit, init_scale, jobs, out, plot);
        let n = at_least("n", f.n.unwrap_or(200), 1)?;
        let k = at_least("k", f.k.unwrap_or(20.min(n)), 1)?;
        if k > n {
            return usage(format!("--k {k} exceeds --n {n}"));
        }
        // Start at the budget density k/n; k = n has no finite logit.
        let init_logit = f.init_logit.unwrap_or(if k < n { (k as f64 / (n - k) as f64).ln() } else { 0.0 });
        if !init_logit.is_finite() {
            return usage("--init-logit must be finite");
        }
        let init_scale = f.init_scale.unwrap_or(0.0);
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return usage("--init-scale must be non-negative");
        }
        let cfg = TrainFlConfig {
            command: "train-fl".into(),
            seed: f.seed.unwrap_or(0),
            n,
            k,
            beta: positive("beta", f.beta.unwrap_or(DEFAULT_BETA))?,
            epochs: at_least("epochs", f.epochs.unwrap_or(300), 1)?,
            lr: positive("lr", f.lr.unwrap_or(0.01))?,
            scheme: f.scheme.unwrap_or_else(|| "both".into()),
            temperatures: temperatures(f.temperatures, &DEFAULT_TEMPERATURES)?,
            steps: at_least("steps", f.steps.unwrap_or(n.min(50)), 1)?,
            init_logit,
            init_scale,
            jobs: jobs(f.jobs)?,
            out: f.out.unwrap_or_else(default_out),
            plot: plot_flag(f.plot),
        };
        train_schemes(&cfg.scheme)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub command: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub beta: f64,
    pub problem: String,
    pub scheme: String,
    pub temperatures: Vec<f64>,
    pub steps: usize,
    pub points: usize,
    pub threshold: f64,
    pub jobs: usize,
    pub out: PathBuf,
}

impl GradCheckConfig {
    pub fn resolve(flags: GradCheckFlags) -> Result<Self, CliError> {
        let file: GradCheckFlags = load_file(flags.config.as_deref())?;
        check_command(file.command.as_deref(), "grad-check")?;
        let f = merge_from!(flags, file; seed, n, k, beta, problem, scheme, temperatures, steps, points, threshold, jobs, out);
        let n = at_least("n", f.n.unwrap_or(10), 1)?;
        let k = at_least("k", f.k.unwrap_or(3.min(n)), 1)?;
        if k > n {
            return usage(format!("--k {k} exceeds --n {n}"));
        }
        let cfg = GradCheckConfig {
            command: "grad-check".into(),
            seed: f.seed.unwrap_or(0),
            n,
            k,
            beta: positive("beta", f.beta.unwrap_or(1.0))?,
            problem: f.problem.unwrap_or_else(|| "all".into()),
            scheme: f.scheme.unwrap_or_else(|| "all".into()),
            temperatures: temperatures(f.temperatures, &[1.0, 0.1])?,
            steps: at_least("steps", f.steps.unwrap_or(n), 1)?,
            points: at_least("points", f.points.unwrap_or(20), 1)?,
            threshold: positive("threshold", f.threshold.unwrap_or(1e-4))?,
            jobs: jobs(f.jobs)?,
            out: f.out.unwrap_or_else(default_out),
        };
        problems(&cfg.problem)?;
        pipelines(&cfg.scheme)?;
        Ok(cfg)
    }
}
