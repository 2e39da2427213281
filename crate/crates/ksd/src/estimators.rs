//! Squared-KSD estimators: the quadratic V/U-statistics and the low-rank
//! Nyström estimator.
//!
//! The Nyström estimator projects the empirical mean Stein feature onto the
//! span of m subsampled features x̃₁,…,x̃_m (drawn uniformly with replacement)
//! and evaluates the squared norm of the projection in closed form:
//!
//! ```text
//! S̃² = βᵀ K_mm⁻ β,    β = (1/n) K_mn 𝟙_n,
//! ```
//!
//! with K_mm⁻ a spectral Moore–Penrose pseudo-inverse. Assembly is O(mn)
//! kernel evaluations plus an O(m³) eigendecomposition; sampling with
//! replacement makes duplicate rows (and hence exact rank deficiency of K_mm)
//! routine, which the eigenvalue cutoff absorbs.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;

use crate::error::{KsdError, Result};
use crate::rng::rng_from_seed;
use crate::sample::SampleSet;
use crate::stein::{GramBlock, SteinKernel};

/// Which estimator produced a [`KsdEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    V,
    U,
    Nystrom,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::V => "v",
            Self::U => "u",
            Self::Nystrom => "nystrom",
        }
    }
}

/// A squared-KSD estimate together with its square root.
///
/// `value` is sqrt(max(squared_value, 0)). V and Nyström statistics are
/// squared norms, so their `squared_value` is clamped at zero (rounding can
/// produce tiny negatives); the U-statistic is unbiased and may be negative.
#[derive(Debug, Clone, Copy)]
pub struct KsdEstimate {
    pub squared_value: f64,
    pub value: f64,
    pub kind: EstimatorKind,
    pub n: usize,
    pub m: Option<usize>,
}

impl KsdEstimate {
    fn clamped(squared: f64, kind: EstimatorKind, n: usize, m: Option<usize>) -> Self {
        // The population quantity is a squared RKHS norm; any negative here is
        // floating-point rounding.
        debug_assert!(squared > -1e-9, "squared statistic {squared} below rounding");
        let squared_value = squared.max(0.0);
        Self {
            squared_value,
            value: squared_value.sqrt(),
            kind,
            n,
            m,
        }
    }
}

/// Default relative eigenvalue cutoff for the spectral pseudo-inverse.
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// The Nyström subsample: m row indices drawn uniformly with replacement from
/// {0,…,n−1}, plus the pseudo-inverse tolerance used when inverting K_mm.
#[derive(Debug, Clone)]
pub struct NystromPlan {
    pub indices: Vec<usize>,
    pub pinv_rtol: f64,
    pub seed: u64,
}

impl NystromPlan {
    /// Draws m indices uniformly i.i.d. from 0..n.
    pub fn sample(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(KsdError::InvalidParameter(format!(
                "Nyström size must satisfy 1 ≤ m ≤ n, got m={m}, n={n}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let indices = (0..m).map(|_| rng.random_range(0..n)).collect();
        Ok(Self {
            indices,
            pinv_rtol: DEFAULT_PINV_RTOL,
            seed,
        })
    }

    /// Uses explicitly chosen indices (e.g. a permutation of 0..n for exact
    /// recovery of the V-statistic).
    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(KsdError::EmptySampleSet);
        }
        Ok(Self {
            indices,
            pinv_rtol: DEFAULT_PINV_RTOL,
            seed: 0,
        })
    }

    pub fn with_pinv_rtol(mut self, rtol: f64) -> Result<Self> {
        if !(rtol.is_finite() && rtol > 0.0 && rtol < 1.0) {
            return Err(KsdError::InvalidParameter(format!(
                "pseudo-inverse tolerance must lie in (0, 1), got {rtol}"
            )));
        }
        self.pinv_rtol = rtol;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// The paper-default subsample size m = ⌈4√n⌉.
    pub fn default_m(n: usize) -> usize {
        (4.0 * (n as f64).sqrt()).ceil() as usize
    }
}

/// V-statistic: (1/n²) Σᵢⱼ h_p(xᵢ, xⱼ). Biased, nonnegative up to rounding.
pub fn v_statistic(sk: &SteinKernel, samples: &SampleSet) -> Result<KsdEstimate> {
    let n = samples.n();
    let (total, _diag) = sk.double_sum(samples)?;
    Ok(KsdEstimate::clamped(
        total / (n as f64 * n as f64),
        EstimatorKind::V,
        n,
        None,
    ))
}

/// U-statistic: (1/(n(n−1))) Σ_{i≠j} h_p(xᵢ, xⱼ). Unbiased, may be negative.
pub fn u_statistic(sk: &SteinKernel, samples: &SampleSet) -> Result<KsdEstimate> {
    let n = samples.n();
    if n < 2 {
        return Err(KsdError::InvalidParameter(
            "the U-statistic requires at least two samples".into(),
        ));
    }
    let (total, diag) = sk.double_sum(samples)?;
    let squared = (total - diag) / (n as f64 * (n - 1) as f64);
    Ok(KsdEstimate {
        squared_value: squared,
        value: squared.max(0.0).sqrt(),
        kind: EstimatorKind::U,
        n,
        m: None,
    })
}

/// Spectral Moore–Penrose pseudo-inverse of a symmetric matrix, kept in
/// factorized form so quadratic forms cost O(m·rank) after the O(m³) setup.
#[derive(Debug, Clone)]
pub struct SpectralPinv {
    /// Retained eigenvectors, one column per retained eigenpair.
    vectors: Array2<f64>,
    /// Reciprocals of the retained eigenvalues.
    inv_values: Array1<f64>,
    dim: usize,
}

impl SpectralPinv {
    /// Eigendecomposes `matrix` and drops eigenvalues λᵢ ≤ rtol·max(λ_max, 0)
    /// (and all non-positive ones).
    pub fn new(matrix: &Array2<f64>, rtol: f64) -> Result<Self> {
        let m = matrix.nrows();
        if m == 0 || matrix.ncols() != m {
            return Err(KsdError::NotSymmetric);
        }
        if !(rtol.is_finite() && rtol > 0.0 && rtol < 1.0) {
            return Err(KsdError::InvalidParameter(format!(
                "pseudo-inverse tolerance must lie in (0, 1), got {rtol}"
            )));
        }
        let mut max_abs = 0.0f64;
        for &v in matrix.iter() {
            if v.is_nan() {
                return Err(KsdError::NonFinite { row: 0, col: 0 });
            }
            max_abs = max_abs.max(v.abs());
        }
        let asym_tol = 1e-10 * max_abs.max(1e-300);
        for i in 0..m {
            for j in (i + 1)..m {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > asym_tol {
                    return Err(KsdError::NotSymmetric);
                }
            }
        }
        let (eigvals, eigvecs) = matrix
            .eigh(UPLO::Lower)
            .map_err(|e| KsdError::Eigen(e.to_string()))?;
        let lambda_max = eigvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cutoff = rtol * lambda_max.max(0.0);
        let retained: Vec<usize> = (0..m)
            .filter(|&i| eigvals[i] > cutoff && eigvals[i] > 0.0)
            .collect();
        let mut vectors = Array2::zeros((m, retained.len()));
        let mut inv_values = Array1::zeros(retained.len());
        for (k, &i) in retained.iter().enumerate() {
            vectors.column_mut(k).assign(&eigvecs.column(i));
            inv_values[k] = 1.0 / eigvals[i];
        }
        Ok(Self {
            vectors,
            inv_values,
            dim: m,
        })
    }

    /// Materializes the pseudo-inverse V Λ⁻¹ Vᵀ.
    pub fn matrix(&self) -> Array2<f64> {
        let scaled = &self.vectors * &self.inv_values.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&self.vectors.t())
    }

    /// vᵀ A⁻ v.
    pub fn quadratic_form(&self, v: &Array1<f64>) -> f64 {
        let proj = self.vectors.t().dot(v);
        proj.iter()
            .zip(self.inv_values.iter())
            .map(|(p, iv)| p * p * iv)
            .sum()
    }

    /// A⁻ v.
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        let proj = self.vectors.t().dot(v) * &self.inv_values;
        self.vectors.dot(&proj)
    }

    pub fn rank(&self) -> usize {
        self.inv_values.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Moore–Penrose pseudo-inverse of a square symmetric Gram block via
/// eigendecomposition with a relative eigenvalue cutoff.
pub fn spectral_pinv(block: &GramBlock, rtol: f64) -> Result<Array2<f64>> {
    Ok(SpectralPinv::new(&block.values, rtol)?.matrix())
}

/// Penrose spot-check on random probe vectors: A A⁻ A v ≈ A v and
/// A⁻ A A⁻ v ≈ A⁻ v. Matrix-free so debug builds stay within O(m²) per probe.
///
/// The tolerance accounts for the cutoff conditioning: eigenpairs retained
/// just above rtol·λ_max carry a backward error of order eps·λ_max that the
/// reciprocal amplifies by up to eps/rtol, so 1e−8 alone is not attainable at
/// tight cutoffs. The probe still catches ordering/sign/rank bugs, which show
/// up at O(1).
#[cfg(debug_assertions)]
fn debug_check_penrose(matrix: &Array2<f64>, pinv: &SpectralPinv, rtol: f64) {
    let m = matrix.nrows();
    let tol = 1e-8f64.max(16.0 * (m as f64).sqrt() * f64::EPSILON / rtol);
    let mut rng = rng_from_seed(0xC0FFEE);
    for _ in 0..3 {
        let v = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
        let av = matrix.dot(&v);
        let a_pinv_av = matrix.dot(&pinv.apply(&av));
        let scale = av.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let err = (&a_pinv_av - &av)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        debug_assert!(
            err <= tol * scale.max(1.0),
            "A A⁻ A probe deviates: {err} vs scale {scale}"
        );
        let pv = pinv.apply(&v);
        let p_a_pv = pinv.apply(&matrix.dot(&pv));
        let pscale = pv.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let perr = (&p_a_pv - &pv).iter().map(|x| x * x).sum::<f64>().sqrt();
        debug_assert!(
            perr <= tol * pscale.max(1.0),
            "A⁻ A A⁻ probe deviates: {perr} vs scale {pscale}"
        );
    }
}

/// Shared Nyström factorization: the m×n cross Gram, the m×m landmark Gram,
/// and its spectral pseudo-inverse. Bootstrap reuses this across draws.
pub(crate) struct NystromFactors {
    pub cross: Array2<f64>,
    pub pinv: SpectralPinv,
}

pub(crate) fn nystrom_factors(
    sk: &SteinKernel,
    samples: &SampleSet,
    plan: &NystromPlan,
) -> Result<NystromFactors> {
    let n = samples.n();
    if plan.indices.is_empty() {
        return Err(KsdError::EmptySampleSet);
    }
    for &idx in &plan.indices {
        if idx >= n {
            return Err(KsdError::IndexOutOfRange { index: idx, n });
        }
    }
    let cross = sk.gram_cross(samples, &plan.indices)?;
    // K_mm is a column gather of K_mn: K_mm[i][j] = h_p(x̃_i, x_{idx_j}).
    let m = plan.indices.len();
    let mut landmark = Array2::zeros((m, m));
    for (j, &idx) in plan.indices.iter().enumerate() {
        for i in 0..m {
            landmark[(i, j)] = cross[(i, idx)];
        }
    }
    crate::stein::symmetrize(&mut landmark);
    let pinv = SpectralPinv::new(&landmark, plan.pinv_rtol)?;
    #[cfg(debug_assertions)]
    debug_check_penrose(&landmark, &pinv, plan.pinv_rtol);
    Ok(NystromFactors { cross, pinv })
}

/// Nyström-accelerated squared-KSD estimator, O(mn + m³).
pub fn nystrom_statistic(
    sk: &SteinKernel,
    samples: &SampleSet,
    plan: &NystromPlan,
) -> Result<KsdEstimate> {
    let n = samples.n();
    let factors = nystrom_factors(sk, samples, plan)?;
    let uniform = Array1::from_elem(n, 1.0 / n as f64);
    let beta = factors.cross.dot(&uniform);
    let squared = factors.pinv.quadratic_form(&beta);
    Ok(KsdEstimate::clamped(
        squared,
        EstimatorKind::Nystrom,
        n,
        Some(plan.m()),
    ))
}
