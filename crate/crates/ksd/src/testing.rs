//! Wild-bootstrap goodness-of-fit tests.
//!
//! The test of H₀: Q = P proceeds in three steps: compute the squared-KSD
//! statistic, simulate its null distribution by multiplying kernel-sum terms
//! with random sign chains (the wild bootstrap), and reject when the statistic
//! exceeds the empirical (1−α) quantile of the D bootstrap draws.
//!
//! The full bootstrap draw is B = (1/n²) wᵀ K w over one assembled n×n Gram;
//! the Nyström bootstrap replaces K with its low-rank factorization
//! K_nm K_mm⁻ K_mn, so each draw costs O(nm + m²) after a one-time
//! O(nm + m³) factorization.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{KsdError, Result};
use crate::estimators::{
    nystrom_factors, nystrom_statistic, EstimatorKind, NystromPlan, DEFAULT_PINV_RTOL,
};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sample::SampleSet;
use crate::stein::SteinKernel;

/// Which statistic (and matching bootstrap) a test runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestEstimator {
    /// Quadratic V-statistic with the full wild bootstrap.
    FullV,
    /// Quadratic U-statistic; the bootstrap draw omits the Gram diagonal.
    FullU,
    /// Nyström statistic with the low-rank bootstrap.
    Nystrom { m: usize, pinv_rtol: f64 },
}

impl TestEstimator {
    pub fn nystrom(m: usize) -> Self {
        Self::Nystrom {
            m,
            pinv_rtol: DEFAULT_PINV_RTOL,
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            Self::FullV => EstimatorKind::V,
            Self::FullU => EstimatorKind::U,
            Self::Nystrom { .. } => EstimatorKind::Nystrom,
        }
    }
}

/// Test configuration: level, bootstrap size, sign-chain flip probability,
/// estimator, and the master seed all randomness derives from.
#[derive(Debug, Clone)]
pub struct TestConfig {
    pub alpha: f64,
    pub num_bootstrap: usize,
    pub flip_probability: f64,
    pub estimator: TestEstimator,
    pub seed: u64,
}

impl TestConfig {
    /// Flip probability defaults to 0.5, the i.i.d. sign case of the wild
    /// bootstrap chain.
    pub fn new(alpha: f64, num_bootstrap: usize, estimator: TestEstimator, seed: u64) -> Result<Self> {
        let config = Self {
            alpha,
            num_bootstrap,
            flip_probability: 0.5,
            estimator,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_flip_probability(mut self, flip_probability: f64) -> Result<Self> {
        self.flip_probability = flip_probability;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KsdError::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.num_bootstrap == 0 {
            return Err(KsdError::InvalidParameter(
                "at least one bootstrap draw is required".into(),
            ));
        }
        if !(self.flip_probability.is_finite()
            && self.flip_probability > 0.0
            && self.flip_probability <= 1.0)
        {
            return Err(KsdError::InvalidParameter(format!(
                "flip probability must lie in (0, 1], got {}",
                self.flip_probability
            )));
        }
        if let TestEstimator::Nystrom { m, pinv_rtol } = self.estimator {
            if m == 0 {
                return Err(KsdError::InvalidParameter(
                    "Nyström subsample size must be ≥ 1".into(),
                ));
            }
            if !(pinv_rtol.is_finite() && pinv_rtol > 0.0 && pinv_rtol < 1.0) {
                return Err(KsdError::InvalidParameter(format!(
                    "pseudo-inverse tolerance must lie in (0, 1), got {pinv_rtol}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one goodness-of-fit test.
#[derive(Debug, Clone)]
pub struct TestReport {
    /// The observed squared-KSD statistic.
    pub statistic: f64,
    /// Empirical (1−α) quantile of the bootstrap draws (upper order statistic
    /// at rank ⌈(1−α)D⌉).
    pub threshold: f64,
    /// Add-one p-value (1 + #{draws ≥ statistic}) / (D + 1).
    pub p_value: f64,
    /// statistic > threshold.
    pub reject: bool,
    pub bootstrap_draws: Vec<f64>,
    pub wall_time: Duration,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub m: Option<usize>,
}

/// Wild-bootstrap sign chain: w₁ uniform on {−1, +1}; each later entry flips
/// the previous sign with the given probability. At flip probability 0.5 the
/// signs are i.i.d. Rademacher.
pub fn wild_weights(n: usize, flip_probability: f64, seed: u64) -> Vec<f64> {
    assert!(n >= 1, "weight chain needs at least one entry");
    let mut rng = rng_from_seed(seed);
    let mut w = Vec::with_capacity(n);
    let mut current: f64 = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
    w.push(current);
    for _ in 1..n {
        if rng.random::<f64>() < flip_probability {
            current = -current;
        }
        w.push(current);
    }
    w
}

/// (1/n²) wᵀ K w for one weight vector.
pub(crate) fn wild_draw_full(gram: &Array2<f64>, weights: &[f64]) -> f64 {
    let n = gram.nrows();
    let w = Array1::from_vec(weights.to_vec());
    let kw = gram.dot(&w);
    w.dot(&kw) / (n as f64 * n as f64)
}

/// U-form draw: omits the diagonal, (wᵀKw − tr K)/(n(n−1)) since wᵢ² = 1.
pub(crate) fn wild_draw_full_u(gram: &Array2<f64>, weights: &[f64], trace: f64) -> f64 {
    let n = gram.nrows();
    let w = Array1::from_vec(weights.to_vec());
    let kw = gram.dot(&w);
    (w.dot(&kw) - trace) / (n as f64 * (n - 1) as f64)
}

fn weight_seeds(config: &TestConfig) -> impl Iterator<Item = u64> + '_ {
    (0..config.num_bootstrap as u64).map(|t| derive_seed(config.seed, stream::WILD_WEIGHTS, t))
}

/// D full wild-bootstrap draws, reusing one assembled n×n Gram.
pub fn bootstrap_full(
    sk: &SteinKernel,
    samples: &SampleSet,
    config: &TestConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let gram = sk.gram_full(samples)?;
    Ok(bootstrap_full_from_gram(&gram, samples.n(), config))
}

fn bootstrap_full_from_gram(gram: &Array2<f64>, n: usize, config: &TestConfig) -> Vec<f64> {
    weight_seeds(config)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let w = wild_weights(n, config.flip_probability, seed);
            wild_draw_full(gram, &w)
        })
        .collect()
}

fn bootstrap_full_u_from_gram(gram: &Array2<f64>, n: usize, config: &TestConfig) -> Vec<f64> {
    let trace: f64 = (0..n).map(|i| gram[(i, i)]).sum();
    weight_seeds(config)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let w = wild_weights(n, config.flip_probability, seed);
            wild_draw_full_u(gram, &w, trace)
        })
        .collect()
}

/// D Nyström bootstrap draws: per draw v = K_mn w, then vᵀ K_mm⁻ v, with the
/// factorization computed once. Weight seeds match [`bootstrap_full`]
/// draw-for-draw under a shared config seed.
pub fn bootstrap_nystrom(
    sk: &SteinKernel,
    samples: &SampleSet,
    plan: &NystromPlan,
    config: &TestConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let factors = nystrom_factors(sk, samples, plan)?;
    let n = samples.n();
    Ok(weight_seeds(config)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let w = wild_weights(n, config.flip_probability, seed);
            let v = factors.cross.dot(&Array1::from_vec(w));
            factors.pinv.quadratic_form(&v) / (n as f64 * n as f64)
        })
        .collect())
}

/// Empirical (1−α) quantile: the order statistic at 1-based rank ⌈(1−α)D⌉ of
/// the sorted draws. Conservative at finite D.
pub(crate) fn bootstrap_threshold(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("draws are finite"));
    let rank = ((1.0 - alpha) * draws.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, draws.len()) - 1]
}

/// Runs the three-step wild-bootstrap test for the configured estimator.
pub fn run_test(sk: &SteinKernel, samples: &SampleSet, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let start = Instant::now();
    let n = samples.n();
    let (statistic, draws, m) = match config.estimator {
        TestEstimator::FullV => {
            let gram = sk.gram_full(samples)?;
            let total: f64 = gram.iter().sum();
            let statistic = (total / (n as f64 * n as f64)).max(0.0);
            let draws = bootstrap_full_from_gram(&gram, n, config);
            (statistic, draws, None)
        }
        TestEstimator::FullU => {
            if n < 2 {
                return Err(KsdError::InvalidParameter(
                    "the U-statistic requires at least two samples".into(),
                ));
            }
            let gram = sk.gram_full(samples)?;
            let total: f64 = gram.iter().sum();
            let trace: f64 = (0..n).map(|i| gram[(i, i)]).sum();
            let statistic = (total - trace) / (n as f64 * (n - 1) as f64);
            let draws = bootstrap_full_u_from_gram(&gram, n, config);
            (statistic, draws, None)
        }
        TestEstimator::Nystrom { m, pinv_rtol } => {
            let plan = NystromPlan::sample(n, m.min(n), derive_seed(config.seed, stream::NYSTROM_PLAN, 0))?
                .with_pinv_rtol(pinv_rtol)?;
            let statistic = nystrom_statistic(sk, samples, &plan)?.squared_value;
            let draws = bootstrap_nystrom(sk, samples, &plan, config)?;
            (statistic, draws, Some(plan.m()))
        }
    };
    let threshold = bootstrap_threshold(&draws, config.alpha);
    let exceed = draws.iter().filter(|&&b| b >= statistic).count();
    let p_value = (1 + exceed) as f64 / (draws.len() + 1) as f64;
    Ok(TestReport {
        statistic,
        threshold,
        p_value,
        reject: statistic > threshold,
        bootstrap_draws: draws,
        wall_time: start.elapsed(),
        estimator: config.estimator.kind(),
        n,
        m,
    })
}
