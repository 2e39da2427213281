//! Bandwidth selection, empirical effective dimension, and rate fitting.

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;

use crate::error::{KsdError, Result};
use crate::rng::{rng_from_seed, stream};
use crate::sample::SampleSet;
use crate::stein::SteinKernel;

/// Default cap on the number of pairwise distances used by the median
/// heuristic before it switches to a seeded uniform subsample.
pub const DEFAULT_MAX_PAIRS: usize = 1_000_000;

/// RBF bandwidth from the median heuristic: γ = 1 / (2 · median of squared
/// pairwise distances). When the pair count n(n−1)/2 exceeds `max_pairs`, a
/// fixed-seed uniform subsample of `max_pairs` pairs is used instead, so the
/// result stays a deterministic function of the input.
pub fn median_heuristic_gamma(samples: &SampleSet, max_pairs: usize) -> Result<f64> {
    let n = samples.n();
    if n < 2 {
        return Err(KsdError::InvalidParameter(
            "the median heuristic requires at least two samples".into(),
        ));
    }
    if max_pairs == 0 {
        return Err(KsdError::InvalidParameter(
            "max_pairs must be at least 1".into(),
        ));
    }
    let total_pairs = n * (n - 1) / 2;
    let mut sq_dists: Vec<f64> = if total_pairs <= max_pairs {
        let mut out = Vec::with_capacity(total_pairs);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(crate::kernel::sq_dist(samples.row(i), samples.row(j)));
            }
        }
        out
    } else {
        let mut rng = rng_from_seed(crate::rng::derive_seed(0, stream::MEDIAN_PAIRS, 0));
        (0..max_pairs)
            .map(|_| {
                let i = rng.random_range(0..n);
                let j = loop {
                    let j = rng.random_range(0..n);
                    if j != i {
                        break j;
                    }
                };
                crate::kernel::sq_dist(samples.row(i), samples.row(j))
            })
            .collect()
    };
    sq_dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let mid = sq_dists.len() / 2;
    let median = if sq_dists.len() % 2 == 1 {
        sq_dists[mid]
    } else {
        0.5 * (sq_dists[mid - 1] + sq_dists[mid])
    };
    if median <= 0.0 {
        return Err(KsdError::DegenerateSample);
    }
    Ok(1.0 / (2.0 * median))
}

/// Empirical effective-dimension curve n_eff(λ) = Σᵢ λ̂ᵢ / (λ̂ᵢ + λ) over the
/// nonnegative spectrum (λ̂ᵢ) of the double-centered Stein Gram divided by n,
/// together with trace_total = Σᵢ λ̂ᵢ.
#[derive(Debug, Clone)]
pub struct EffectiveDimensionCurve {
    pub lambdas: Vec<f64>,
    pub n_eff: Vec<f64>,
    pub trace_total: f64,
}

/// n_eff(λ) for one regularizer over a fixed spectrum.
pub fn effective_dimension_from_spectrum(eigenvalues: &[f64], lambda: f64) -> f64 {
    eigenvalues
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v / (v + lambda))
        .sum()
}

/// Effective dimension of the centered empirical Stein covariance operator:
/// forms H̄ = (I − 𝟙𝟙ᵀ/n) K (I − 𝟙𝟙ᵀ/n) / n, takes its nonnegative
/// eigenvalues, and evaluates n_eff at each requested λ.
pub fn effective_dimension(
    sk: &SteinKernel,
    samples: &SampleSet,
    lambdas: &[f64],
) -> Result<EffectiveDimensionCurve> {
    let n = samples.n();
    if n < 2 {
        return Err(KsdError::InvalidParameter(
            "effective dimension requires at least two samples".into(),
        ));
    }
    for &l in lambdas {
        if !(l.is_finite() && l > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "regularizers must be positive reals, got {l}"
            )));
        }
    }
    let gram = sk.gram_full(samples)?;
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| gram.row(i).sum() / nf).collect();
    let grand_mean = row_means.iter().sum::<f64>() / nf;
    let centered = Array2::from_shape_fn((n, n), |(i, j)| {
        (gram[(i, j)] - row_means[i] - row_means[j] + grand_mean) / nf
    });
    let (eigvals, _) = centered
        .eigh(UPLO::Lower)
        .map_err(|e| KsdError::Eigen(e.to_string()))?;
    let spectrum: Vec<f64> = eigvals.iter().cloned().filter(|&v| v > 0.0).collect();
    let trace_total: f64 = spectrum.iter().sum();
    let n_eff = lambdas
        .iter()
        .map(|&l| effective_dimension_from_spectrum(&spectrum, l))
        .collect();
    Ok(EffectiveDimensionCurve {
        lambdas: lambdas.to_vec(),
        n_eff,
        trace_total,
    })
}

/// Ordinary least-squares slope of log(mean_error) against log(n).
pub fn fit_rate(ns: &[usize], mean_errors: &[f64]) -> Result<f64> {
    if ns.len() < 3 || ns.len() != mean_errors.len() {
        return Err(KsdError::InvalidParameter(
            "rate fitting requires at least three (n, error) points".into(),
        ));
    }
    for (&n, &e) in ns.iter().zip(mean_errors) {
        if n == 0 || !(e.is_finite() && e > 0.0) {
            return Err(KsdError::InvalidParameter(
                "rate fitting requires positive sample sizes and errors".into(),
            ));
        }
    }
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = mean_errors.iter().map(|&e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(KsdError::InvalidParameter(
            "rate fitting requires at least two distinct sample sizes".into(),
        ));
    }
    Ok(num / den)
}
