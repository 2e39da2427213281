//! Goodness-of-fit testing CLI.
//!
//! `ksd test` runs one wild-bootstrap test on a dataset file; `ksd experiment`
//! reproduces the runtime/power studies over repeated trials, writing a CSV of
//! per-trial results plus a JSON summary sidecar.
//!
//! Exit codes: 0 = ran, H0 not rejected; 1 = ran, H0 rejected;
//! 2 = usage/configuration error; 3 = data error.
//! `KSD_WORKERS` caps the worker threads (default: all available parallelism).

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ksd::rng::derive_seed;
use ksd::{run_test, ScoreModel, SteinKernel, TestConfig, TestEstimator};
use serde::Serialize;

use ksd_cli::dataset::{ingest_dataset, load_rbm, DataError, DatasetFormat};
use ksd_cli::experiment::{
    run_experiment, summary_path, EstimatorChoice, ExperimentKind, ExperimentSpec, KernelChoice,
};

const EXIT_REJECTED: i32 = 1;
const EXIT_USAGE: i32 = 2;
const EXIT_DATA: i32 = 3;

#[derive(Parser)]
#[command(name = "ksd", version, about = "Kernel Stein discrepancy goodness-of-fit testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one goodness-of-fit test on a dataset.
    Test(TestArgs),
    /// Run a multi-trial experiment and write per-trial CSV results.
    Experiment(ExperimentArgs),
}

#[derive(clap::Args)]
struct TestArgs {
    /// Path to the observations.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset encoding.
    #[arg(long, value_enum, default_value_t = DatasetFormat::Csv)]
    format: DatasetFormat,
    /// Target distribution: `gaussian` (standard normal matching the dataset
    /// dimension) or a path to an RBM JSON file {B, b, c_bias}.
    #[arg(long, default_value = "gaussian")]
    target: String,
    /// Kernel: `median-rbf`, `rbf:<gamma>`, or `imq:<c>,<theta>`.
    #[arg(long, default_value = "median-rbf", value_parser = KernelChoice::parse)]
    kernel: KernelChoice,
    /// Test statistic.
    #[arg(long, value_enum, default_value_t = CliEstimator::Nystrom)]
    estimator: CliEstimator,
    /// Nyström subsample factor: m = ceil(m_factor * sqrt(n)).
    #[arg(long, default_value_t = 4.0)]
    m_factor: f64,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Number of wild-bootstrap draws.
    #[arg(long = "bootstrap", default_value_t = 500)]
    num_bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit the full report as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CliEstimator {
    V,
    U,
    Nystrom,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Which study to run.
    #[arg(long, value_enum)]
    experiment: ExperimentKind,
    /// Samples per trial.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Data dimension (visible dimension for the RBM experiment).
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Nyström subsample factor: m = ceil(m_factor * sqrt(n)).
    #[arg(long, default_value_t = 4.0)]
    m_factor: f64,
    /// Kernel: `median-rbf`, `rbf:<gamma>`, or `imq:<c>,<theta>`.
    #[arg(long, default_value = "median-rbf", value_parser = KernelChoice::parse)]
    kernel: KernelChoice,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "bootstrap", default_value_t = 500)]
    num_bootstrap: usize,
    /// Independent repetitions.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RBM weight-noise standard deviation (sigma = 0 keeps H0 true).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Estimator(s) for power experiments; Runtime always runs all.
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Nystrom)]
    estimator: EstimatorChoice,
    /// Dataset for the Custom experiment.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetFormat::Csv)]
    format: DatasetFormat,
    /// Target for the Custom experiment: `gaussian` or an RBM JSON path.
    #[arg(long, default_value = "gaussian")]
    target: String,
    /// Output CSV path; the summary goes to `<out stem>.summary.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct JsonReport {
    estimator: String,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    kernel: String,
    alpha: f64,
    num_bootstrap: usize,
    seed: u64,
    statistic: f64,
    threshold: f64,
    p_value: f64,
    reject: bool,
    wall_ms: f64,
    bootstrap_draws: Vec<f64>,
}

fn main() {
    init_worker_pool();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Test(args) => run_test_command(args),
        Command::Experiment(args) => run_experiment_command(args),
    };
    match code {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = if err.is::<DataError>() { EXIT_DATA } else { EXIT_USAGE };
            std::process::exit(code);
        }
    }
}

/// Worker budget: `KSD_WORKERS` limits the global thread pool; unset means
/// all available parallelism.
fn init_worker_pool() {
    if let Ok(value) = std::env::var("KSD_WORKERS") {
        if let Ok(workers) = value.parse::<usize>() {
            if workers >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build_global();
            }
        }
    }
}

fn resolve_target(target: &str, data_dim: usize) -> anyhow::Result<ScoreModel> {
    if target == "gaussian" {
        return Ok(ScoreModel::standard_gaussian(data_dim)?);
    }
    Ok(load_rbm(std::path::Path::new(target))?)
}

fn run_test_command(args: TestArgs) -> anyhow::Result<i32> {
    let samples = ingest_dataset(&args.dataset, args.format)?;
    let model = resolve_target(&args.target, samples.dim())?;
    if model.dim() != samples.dim() {
        return Err(anyhow::Error::new(DataError::Malformed {
            path: args.dataset.display().to_string(),
            message: format!(
                "dataset dimension {} does not match target dimension {}",
                samples.dim(),
                model.dim()
            ),
        }));
    }
    let kernel = args.kernel.resolve(&samples)?;
    let sk = SteinKernel::new(kernel, model);
    let m = ((args.m_factor * (samples.n() as f64).sqrt()).ceil() as usize).clamp(1, samples.n());
    let estimator = match args.estimator {
        CliEstimator::V => TestEstimator::FullV,
        CliEstimator::U => TestEstimator::FullU,
        CliEstimator::Nystrom => TestEstimator::nystrom(m),
    };
    let config = TestConfig::new(
        args.alpha,
        args.num_bootstrap,
        estimator,
        derive_seed(args.seed, 0x1100, 0),
    )?;
    let report = run_test(&sk, &samples, &config).context("test failed")?;
    if args.json {
        let json = JsonReport {
            estimator: report.estimator.as_str().to_string(),
            n: report.n,
            m: report.m,
            kernel: args.kernel.to_string(),
            alpha: args.alpha,
            num_bootstrap: args.num_bootstrap,
            seed: args.seed,
            statistic: report.statistic,
            threshold: report.threshold,
            p_value: report.p_value,
            reject: report.reject,
            wall_ms: report.wall_time.as_secs_f64() * 1e3,
            bootstrap_draws: report.bootstrap_draws.clone(),
        };
        println!("{}", serde_json::to_string_pretty(&json)?);
    } else {
        println!(
            "estimator={} n={} m={} statistic={:.6e} threshold={:.6e} p_value={:.4} reject={}",
            report.estimator.as_str(),
            report.n,
            report.m.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
            report.statistic,
            report.threshold,
            report.p_value,
            report.reject,
        );
    }
    Ok(if report.reject { EXIT_REJECTED } else { 0 })
}

fn run_experiment_command(args: ExperimentArgs) -> anyhow::Result<i32> {
    let target = match args.experiment {
        ExperimentKind::Custom => {
            let dataset = args
                .dataset
                .as_ref()
                .context("the custom experiment requires --dataset")?;
            let probe = ingest_dataset(dataset, args.format)?;
            Some(resolve_target(&args.target, probe.dim())?)
        }
        _ => None,
    };
    let spec = ExperimentSpec {
        kind: args.experiment,
        n: args.n,
        d: args.d,
        m_factor: args.m_factor,
        kernel: args.kernel,
        alpha: args.alpha,
        num_bootstrap: args.num_bootstrap,
        trials: args.trials,
        seed: args.seed,
        sigma: args.sigma,
        estimator: args.estimator,
        dataset: args.dataset.clone().map(|p| (p, args.format)),
        target,
        out: args.out.clone(),
    };
    let summary = run_experiment(&spec)?;
    println!(
        "wrote {} trial rows to {} (summary: {})",
        spec.trials,
        spec.out.display(),
        summary_path(&spec.out).display()
    );
    for s in &summary.summary {
        match s.power {
            Some(power) => println!(
                "  {}: power={:.3} mean_wall_ms={:.1} q95_wall_ms={:.1}",
                s.estimator, power, s.mean_wall_ms, s.q95_wall_ms
            ),
            None => println!(
                "  {}: mean_wall_ms={:.2} q95_wall_ms={:.2}",
                s.estimator, s.mean_wall_ms, s.q95_wall_ms
            ),
        }
    }
    Ok(0)
}
