//! Experiment harness: power and runtime studies over repeated trials.
//!
//! Each trial derives its own seed from the master seed, draws fresh data
//! (except the Custom experiment, which tests a fixed dataset), resolves the
//! kernel, and runs the configured test. One CSV row is written per trial and
//! estimator; aggregate power and wall-time quantiles go to a JSON sidecar
//! next to the CSV.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use ksd::diagnostics::{median_heuristic_gamma, DEFAULT_MAX_PAIRS};
use ksd::rng::derive_seed;
use ksd::{
    nystrom_statistic, run_test, u_statistic, v_statistic, KernelParams, NystromPlan, SampleSet,
    SamplingDistribution, ScoreModel, SteinKernel, TestConfig, TestEstimator,
};
use rayon::prelude::*;
use serde::Serialize;

pub const CSV_HEADER: [&str; 10] = [
    "trial",
    "estimator",
    "n",
    "d",
    "m",
    "statistic",
    "threshold",
    "p_value",
    "reject",
    "wall_ms",
];

// Seed-stream tags; disjoint from the library's internal streams.
const TAG_TRIAL: u64 = 0x1001;
const TAG_DATA: u64 = 0x1002;
const TAG_RBM: u64 = 0x1003;
const TAG_PERTURB: u64 = 0x1004;
const TAG_TEST: u64 = 0x1005;
const TAG_PLAN: u64 = 0x1006;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Times every estimator kind on identical H0 data; no testing.
    Runtime,
    /// P = N(0, I_d) against Q = Laplace(0, 1/sqrt 2)^d.
    LaplaceVsNormal,
    /// P = N(0, I_d) against Q = multivariate Student-t with 5 dof.
    StudentTVsNormal,
    /// RBM target against a weight-perturbed RBM sampled by Gibbs.
    Rbm,
    /// A user dataset against a user target.
    Custom,
}

/// Which estimators a power experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimatorChoice {
    V,
    U,
    Nystrom,
    All,
}

impl EstimatorChoice {
    fn selected(&self) -> Vec<&'static str> {
        match self {
            Self::V => vec!["v"],
            Self::U => vec!["u"],
            Self::Nystrom => vec!["nystrom"],
            Self::All => vec!["v", "u", "nystrom"],
        }
    }
}

/// Kernel selection: fixed parameters or the data-driven median heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    MedianRbf,
    Rbf { gamma: f64 },
    Imq { c: f64, theta: f64 },
}

impl KernelChoice {
    /// Parses `median-rbf`, `rbf:<gamma>`, or `imq:<c>,<theta>`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text == "median-rbf" {
            return Ok(Self::MedianRbf);
        }
        if let Some(rest) = text.strip_prefix("rbf:") {
            let gamma: f64 = rest
                .trim()
                .parse()
                .map_err(|_| format!("invalid RBF bandwidth: {rest:?}"))?;
            KernelParams::rbf(gamma).map_err(|e| e.to_string())?;
            return Ok(Self::Rbf { gamma });
        }
        if let Some(rest) = text.strip_prefix("imq:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(format!("expected imq:<c>,<theta>, got {text:?}"));
            }
            let c: f64 = parts[0]
                .trim()
                .parse()
                .map_err(|_| format!("invalid IMQ c: {:?}", parts[0]))?;
            let theta: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| format!("invalid IMQ theta: {:?}", parts[1]))?;
            KernelParams::imq(c, theta).map_err(|e| e.to_string())?;
            return Ok(Self::Imq { c, theta });
        }
        Err(format!(
            "unknown kernel {text:?}; expected median-rbf, rbf:<gamma>, or imq:<c>,<theta>"
        ))
    }

    /// Resolves the kernel against the drawn sample (the median heuristic is
    /// data-dependent and re-resolved per trial).
    pub fn resolve(&self, samples: &SampleSet) -> anyhow::Result<KernelParams> {
        Ok(match self {
            Self::MedianRbf => {
                KernelParams::rbf(median_heuristic_gamma(samples, DEFAULT_MAX_PAIRS)?)?
            }
            Self::Rbf { gamma } => KernelParams::rbf(*gamma)?,
            Self::Imq { c, theta } => KernelParams::imq(*c, *theta)?,
        })
    }
}

impl std::fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MedianRbf => write!(f, "median-rbf"),
            Self::Rbf { gamma } => write!(f, "rbf:{gamma}"),
            Self::Imq { c, theta } => write!(f, "imq:{c},{theta}"),
        }
    }
}

/// Full description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n: usize,
    pub d: usize,
    pub m_factor: f64,
    pub kernel: KernelChoice,
    pub alpha: f64,
    pub num_bootstrap: usize,
    pub trials: usize,
    pub seed: u64,
    /// RBM weight-noise standard deviation (Rbm experiment only).
    pub sigma: f64,
    pub estimator: EstimatorChoice,
    /// Dataset and target for the Custom experiment.
    pub dataset: Option<(PathBuf, crate::dataset::DatasetFormat)>,
    pub target: Option<ScoreModel>,
    pub out: PathBuf,
}

impl ExperimentSpec {
    fn validate(&self) -> anyhow::Result<()> {
        if self.trials == 0 || self.n == 0 || self.d == 0 {
            bail!("trials, n, and d must all be positive");
        }
        if !(self.m_factor.is_finite() && self.m_factor > 0.0) {
            bail!("m-factor must be a positive real");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            bail!("sigma must be a nonnegative real");
        }
        if self.kind == ExperimentKind::Custom && self.dataset.is_none() {
            bail!("the custom experiment requires --dataset");
        }
        Ok(())
    }

    fn m(&self) -> usize {
        ((self.m_factor * (self.n as f64).sqrt()).ceil() as usize).clamp(1, self.n)
    }
}

/// One output row; optional fields stay empty in the CSV.
#[derive(Debug, Clone)]
pub struct TrialRow {
    pub trial: usize,
    pub estimator: &'static str,
    pub n: usize,
    pub d: usize,
    pub m: Option<usize>,
    pub statistic: f64,
    pub threshold: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    pub wall_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    /// Rejection fraction; absent for the Runtime experiment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    pub mean_statistic: f64,
    pub mean_wall_ms: f64,
    pub q95_wall_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub kernel: String,
    pub alpha: f64,
    pub num_bootstrap: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub summary: Vec<EstimatorSummary>,
}

/// Runs every trial, writes the per-trial CSV to `spec.out` and the summary
/// JSON sidecar to `<out stem>.summary.json`, and returns the summary.
pub fn run_experiment(spec: &ExperimentSpec) -> anyhow::Result<ExperimentSummary> {
    spec.validate()?;
    // The custom dataset is read once and shared across trials.
    let fixed_data = match (&spec.kind, &spec.dataset) {
        (ExperimentKind::Custom, Some((path, format))) => {
            Some(crate::dataset::ingest_dataset(path, *format)?)
        }
        _ => None,
    };
    let rows: Vec<Vec<TrialRow>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| run_trial(spec, trial, fixed_data.as_ref()))
        .collect::<anyhow::Result<_>>()?;
    let rows: Vec<TrialRow> = rows.into_iter().flatten().collect();

    write_rows(&spec.out, &rows)
        .with_context(|| format!("cannot write {}", spec.out.display()))?;
    let summary = summarize(spec, &rows);
    let sidecar = summary_path(&spec.out);
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(&sidecar).with_context(|| {
            format!("cannot write {}", sidecar.display())
        })?),
        &summary,
    )?;
    Ok(summary)
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn run_trial(
    spec: &ExperimentSpec,
    trial: usize,
    fixed_data: Option<&SampleSet>,
) -> anyhow::Result<Vec<TrialRow>> {
    let trial_seed = derive_seed(spec.seed, TAG_TRIAL, trial as u64);
    let data_seed = derive_seed(trial_seed, TAG_DATA, 0);

    let (samples, model) = match spec.kind {
        ExperimentKind::Runtime => {
            let q = SamplingDistribution::gaussian(spec.d)?;
            (
                q.draw_samples(spec.n, data_seed)?,
                ScoreModel::standard_gaussian(spec.d)?,
            )
        }
        ExperimentKind::LaplaceVsNormal => {
            let q = SamplingDistribution::product_laplace(spec.d, 1.0 / 2.0f64.sqrt())?;
            (
                q.draw_samples(spec.n, data_seed)?,
                ScoreModel::standard_gaussian(spec.d)?,
            )
        }
        ExperimentKind::StudentTVsNormal => {
            let q = SamplingDistribution::student_t(spec.d, 5.0)?;
            (
                q.draw_samples(spec.n, data_seed)?,
                ScoreModel::standard_gaussian(spec.d)?,
            )
        }
        ExperimentKind::Rbm => {
            // Visible/hidden sized 5:4 after the replicated 50/40 design.
            let d_hidden = ((0.8 * spec.d as f64).round() as usize).max(1);
            let target =
                ScoreModel::random_rbm(spec.d, d_hidden, derive_seed(trial_seed, TAG_RBM, 0))?;
            let sampler_model = ksd::score::perturb_rbm(
                &target,
                spec.sigma,
                derive_seed(trial_seed, TAG_PERTURB, 0),
            )?;
            let q = SamplingDistribution::rbm_gibbs(sampler_model)?;
            (q.draw_samples(spec.n, data_seed)?, target)
        }
        ExperimentKind::Custom => {
            let samples = fixed_data.expect("custom dataset ingested upfront").clone();
            let model = match &spec.target {
                Some(model) => model.clone(),
                None => ScoreModel::standard_gaussian(samples.dim())?,
            };
            (samples, model)
        }
    };
    if samples.dim() != model.dim() {
        bail!(
            "dataset dimension {} does not match score model dimension {}",
            samples.dim(),
            model.dim()
        );
    }

    let kernel = spec.kernel.resolve(&samples)?;
    let sk = SteinKernel::new(kernel, model);
    let n = samples.n();
    let d = samples.dim();
    let m = spec.m();

    if spec.kind == ExperimentKind::Runtime {
        // Statistic timing only; every estimator sees identical data.
        let mut rows = Vec::with_capacity(3);
        let t0 = Instant::now();
        let v = v_statistic(&sk, &samples)?;
        rows.push(bare_row(trial, "v", n, d, None, v.squared_value, t0));
        let t0 = Instant::now();
        let u = u_statistic(&sk, &samples)?;
        rows.push(bare_row(trial, "u", n, d, None, u.squared_value, t0));
        let t0 = Instant::now();
        let plan = NystromPlan::sample(n, m, derive_seed(trial_seed, TAG_PLAN, 0))?;
        let nys = nystrom_statistic(&sk, &samples, &plan)?;
        rows.push(bare_row(trial, "nystrom", n, d, Some(m), nys.squared_value, t0));
        return Ok(rows);
    }

    let mut rows = Vec::new();
    for (idx, name) in spec.estimator.selected().into_iter().enumerate() {
        let estimator = match name {
            "v" => TestEstimator::FullV,
            "u" => TestEstimator::FullU,
            _ => TestEstimator::nystrom(m),
        };
        let config = TestConfig::new(
            spec.alpha,
            spec.num_bootstrap,
            estimator,
            derive_seed(trial_seed, TAG_TEST, idx as u64),
        )?;
        let report = run_test(&sk, &samples, &config)?;
        rows.push(TrialRow {
            trial,
            estimator: name,
            n,
            d,
            m: report.m,
            statistic: report.statistic,
            threshold: Some(report.threshold),
            p_value: Some(report.p_value),
            reject: Some(report.reject),
            wall_ms: report.wall_time.as_secs_f64() * 1e3,
        });
    }
    Ok(rows)
}

fn bare_row(
    trial: usize,
    estimator: &'static str,
    n: usize,
    d: usize,
    m: Option<usize>,
    statistic: f64,
    started: Instant,
) -> TrialRow {
    TrialRow {
        trial,
        estimator,
        n,
        d,
        m,
        statistic,
        threshold: None,
        p_value: None,
        reject: None,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

fn write_rows(path: &Path, rows: &[TrialRow]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    writer.write_record(CSV_HEADER)?;
    for r in rows {
        writer.write_record([
            r.trial.to_string(),
            r.estimator.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.m.map(|m| m.to_string()).unwrap_or_default(),
            r.statistic.to_string(),
            r.threshold.map(|v| v.to_string()).unwrap_or_default(),
            r.p_value.map(|v| v.to_string()).unwrap_or_default(),
            r.reject.map(|v| v.to_string()).unwrap_or_default(),
            r.wall_ms.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn summarize(spec: &ExperimentSpec, rows: &[TrialRow]) -> ExperimentSummary {
    let mut summaries = Vec::new();
    let names: Vec<&str> = match spec.kind {
        ExperimentKind::Runtime => vec!["v", "u", "nystrom"],
        _ => spec.estimator.selected(),
    };
    for name in names {
        let subset: Vec<&TrialRow> = rows.iter().filter(|r| r.estimator == name).collect();
        if subset.is_empty() {
            continue;
        }
        let k = subset.len() as f64;
        let power = if subset.iter().all(|r| r.reject.is_some()) {
            Some(subset.iter().filter(|r| r.reject == Some(true)).count() as f64 / k)
        } else {
            None
        };
        let mut walls: Vec<f64> = subset.iter().map(|r| r.wall_ms).collect();
        walls.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        let q95 = walls[((0.95 * walls.len() as f64).ceil() as usize).clamp(1, walls.len()) - 1];
        summaries.push(EstimatorSummary {
            estimator: name.to_string(),
            power,
            mean_statistic: subset.iter().map(|r| r.statistic).sum::<f64>() / k,
            mean_wall_ms: walls.iter().sum::<f64>() / k,
            q95_wall_ms: q95,
        });
    }
    let experiment = match spec.kind {
        ExperimentKind::Runtime => "runtime",
        ExperimentKind::LaplaceVsNormal => "laplace-vs-normal",
        ExperimentKind::StudentTVsNormal => "student-t-vs-normal",
        ExperimentKind::Rbm => "rbm",
        ExperimentKind::Custom => "custom",
    };
    ExperimentSummary {
        experiment: experiment.to_string(),
        n: spec.n,
        d: spec.d,
        m: spec.m(),
        kernel: spec.kernel.to_string(),
        alpha: spec.alpha,
        num_bootstrap: spec.num_bootstrap,
        trials: spec.trials,
        seed: spec.seed,
        sigma: (spec.kind == ExperimentKind::Rbm).then_some(spec.sigma),
        summary: summaries,
    }
}
