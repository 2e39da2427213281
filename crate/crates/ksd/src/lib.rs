//! Kernel Stein discrepancy (KSD) estimation and goodness-of-fit testing.
//!
//! Given samples from an unknown distribution Q and a target density p known
//! only up to normalization (through its score ∇ₓ log p), the KSD measures the
//! discrepancy between Q and p as the RKHS norm of the mean Stein feature map.
//! This crate provides:
//!
//! - differentiable base kernels (RBF, IMQ) with closed-form derivatives
//!   ([`kernel`]),
//! - score models and the samplers used by the experiment harness ([`score`]),
//! - the Stein kernel h_p and its Gram machinery ([`stein`]),
//! - quadratic-time V/U-statistics and the O(mn + m³) Nyström-accelerated
//!   estimator ([`estimators`]),
//! - wild-bootstrap goodness-of-fit tests for both the quadratic and the
//!   Nyström statistic ([`testing`]),
//! - bandwidth selection, empirical effective dimension, and rate fitting
//!   ([`diagnostics`]).
//!
//! All randomized operations take explicit seeds and are bitwise reproducible.

pub mod diagnostics;
mod error;
pub mod estimators;
pub mod kernel;
pub mod rng;
pub mod sample;
pub mod score;
pub mod stein;
pub mod testing;

pub use error::{KsdError, Result};
pub use estimators::{
    nystrom_statistic, u_statistic, v_statistic, EstimatorKind, KsdEstimate, NystromPlan,
};
pub use kernel::KernelParams;
pub use sample::SampleSet;
pub use score::{ScoreModel, SamplingDistribution};
pub use stein::{GramBlock, SteinKernel};
pub use testing::{run_test, TestConfig, TestEstimator, TestReport};
