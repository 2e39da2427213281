//! Score models (targets known up to normalization) and experiment samplers.
//!
//! A score model exposes ∇ₓ log p(x), which is all the Stein operator needs;
//! normalizing constants never enter. The Gauss–Bernoulli RBM has Gaussian
//! visible units and hidden units in {−1, +1}; marginalizing the hidden layer
//! gives the closed-form score b − x + Bᵀ tanh(Bx + c). Targets outside the
//! built-in family plug in through [`ScoreModel::custom`].

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};

use crate::error::{KsdError, Result};
use crate::rng::rng_from_seed;
use crate::sample::SampleSet;

/// Signature of a user-supplied score function: writes ∇ₓ log p(x) for the
/// input point into the output slice of equal length.
pub type ScoreFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A user-supplied score function; see [`ScoreModel::custom`].
#[derive(Clone)]
pub struct CustomScore {
    dim: usize,
    func: Arc<ScoreFn>,
}

impl fmt::Debug for CustomScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomScore").field("dim", &self.dim).finish()
    }
}

impl PartialEq for CustomScore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && Arc::ptr_eq(&self.func, &other.func)
    }
}

/// A target distribution exposing its score function.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    /// N(0, I_d); score(x) = −x.
    StandardGaussian { dim: usize },
    /// Gauss–Bernoulli restricted Boltzmann machine with hidden units in
    /// {−1, +1}: p(x) ∝ exp(bᵀx − ‖x‖²/2) Π_j 2cosh((Bx + c)_j).
    GaussBernoulliRbm {
        /// Coupling matrix B, d_hidden × d_visible.
        weights: Array2<f64>,
        /// Visible bias b.
        visible_bias: Array1<f64>,
        /// Hidden bias c.
        hidden_bias: Array1<f64>,
    },
    /// In-process extension point for targets outside the built-in family.
    Custom(CustomScore),
}

impl ScoreModel {
    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(KsdError::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        Ok(Self::StandardGaussian { dim })
    }

    pub fn gauss_bernoulli_rbm(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        let (d_hidden, d_visible) = weights.dim();
        if d_visible == 0 || d_hidden == 0 {
            return Err(KsdError::InvalidParameter(
                "RBM must have at least one visible and one hidden unit".into(),
            ));
        }
        if visible_bias.len() != d_visible {
            return Err(KsdError::DimensionMismatch {
                expected: d_visible,
                got: visible_bias.len(),
            });
        }
        if hidden_bias.len() != d_hidden {
            return Err(KsdError::DimensionMismatch {
                expected: d_hidden,
                got: hidden_bias.len(),
            });
        }
        let entries = weights
            .iter()
            .chain(visible_bias.iter())
            .chain(hidden_bias.iter());
        for v in entries {
            if !v.is_finite() {
                return Err(KsdError::InvalidParameter(
                    "RBM parameters contain a non-finite entry".into(),
                ));
            }
        }
        Ok(Self::GaussBernoulliRbm {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    /// Wraps a user-supplied score function writing ∇ₓ log p(x) into its
    /// output slice. The function must be pure and thread-safe and return
    /// finite values for finite input; it is called from concurrent Gram
    /// assembly without further validation.
    pub fn custom<F>(dim: usize, score_fn: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(KsdError::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        Ok(Self::Custom(CustomScore {
            dim,
            func: Arc::new(score_fn),
        }))
    }

    /// A fresh RBM with N(0, 1) weights and biases, the experiment harness
    /// default when the target parameters are not user-supplied.
    pub fn random_rbm(d_visible: usize, d_hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let weights =
            Array2::from_shape_fn((d_hidden, d_visible), |_| StandardNormal.sample(&mut rng));
        let visible_bias = Array1::from_shape_fn(d_visible, |_| StandardNormal.sample(&mut rng));
        let hidden_bias = Array1::from_shape_fn(d_hidden, |_| StandardNormal.sample(&mut rng));
        Self::gauss_bernoulli_rbm(weights, visible_bias, hidden_bias)
    }

    /// Dimension of the visible space the score acts on.
    pub fn dim(&self) -> usize {
        match self {
            Self::StandardGaussian { dim } => *dim,
            Self::GaussBernoulliRbm { weights, .. } => weights.ncols(),
            Self::Custom(custom) => custom.dim,
        }
    }

    /// ∇ₓ log p(x).
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(KsdError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        for (col, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(KsdError::NonFinite { row: 0, col });
            }
        }
        let mut out = vec![0.0; x.len()];
        self.score_into(x, &mut out);
        Ok(out)
    }

    /// Score evaluation without validation; `x` must match `dim()`.
    pub(crate) fn score_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::StandardGaussian { .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi;
                }
            }
            Self::Custom(custom) => (custom.func)(x, out),
            Self::GaussBernoulliRbm {
                weights,
                visible_bias,
                hidden_bias,
            } => {
                let (d_hidden, d_visible) = weights.dim();
                let w = weights.as_slice().expect("weights are standard layout");
                // activation = tanh(Bx + c)
                let mut activation = vec![0.0; d_hidden];
                for j in 0..d_hidden {
                    let row = &w[j * d_visible..(j + 1) * d_visible];
                    let mut acc = hidden_bias[j];
                    for (wk, xk) in row.iter().zip(x) {
                        acc += wk * xk;
                    }
                    activation[j] = acc.tanh();
                }
                // score = b − x + Bᵀ tanh(Bx + c)
                for i in 0..d_visible {
                    out[i] = visible_bias[i] - x[i];
                }
                for j in 0..d_hidden {
                    let row = &w[j * d_visible..(j + 1) * d_visible];
                    let a = activation[j];
                    for (o, wk) in out.iter_mut().zip(row) {
                        *o += wk * a;
                    }
                }
            }
        }
    }

    /// Scores of every row of `samples`, as an n×d array.
    pub fn score_matrix(&self, samples: &SampleSet) -> Result<Array2<f64>> {
        if samples.dim() != self.dim() {
            return Err(KsdError::DimensionMismatch {
                expected: self.dim(),
                got: samples.dim(),
            });
        }
        let (n, d) = (samples.n(), samples.dim());
        let mut out = Array2::zeros((n, d));
        let buf = out.as_slice_mut().expect("freshly allocated array");
        for i in 0..n {
            self.score_into(samples.row(i), &mut buf[i * d..(i + 1) * d]);
        }
        Ok(out)
    }
}

/// Returns a copy of an RBM score model whose coupling matrix is shifted by
/// independent N(0, σ²) noise; biases are unchanged and σ = 0 returns an
/// identical model.
pub fn perturb_rbm(model: &ScoreModel, sigma: f64, seed: u64) -> Result<ScoreModel> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(KsdError::InvalidParameter(format!(
            "sigma must be a nonnegative real, got {sigma}"
        )));
    }
    match model {
        ScoreModel::GaussBernoulliRbm {
            weights,
            visible_bias,
            hidden_bias,
        } => {
            if sigma == 0.0 {
                return Ok(model.clone());
            }
            let mut rng = rng_from_seed(seed);
            let perturbed = weights.mapv(|w| {
                let z: f64 = StandardNormal.sample(&mut rng);
                w + sigma * z
            });
            Ok(ScoreModel::GaussBernoulliRbm {
                weights: perturbed,
                visible_bias: visible_bias.clone(),
                hidden_bias: hidden_bias.clone(),
            })
        }
        _ => Err(KsdError::InvalidParameter(
            "perturbation applies to RBM models only".into(),
        )),
    }
}

/// Default number of discarded Gibbs sweeps for [`SamplingDistribution::RbmGibbs`].
pub const GIBBS_BURN_IN: usize = 2000;
/// Default Gibbs thinning (sweeps between kept states).
pub const GIBBS_THINNING: usize = 50;

/// Distributions the experiment harness draws samples from.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingDistribution {
    /// N(0, I_d).
    Gaussian { dim: usize },
    /// Product of d Laplace(0, scale) distributions.
    ProductLaplace { dim: usize, scale: f64 },
    /// Standard multivariate Student-t with identity shape.
    StudentT { dim: usize, dof: f64 },
    /// Block Gibbs sampler for a Gauss–Bernoulli RBM.
    RbmGibbs {
        model: ScoreModel,
        burn_in: usize,
        thinning: usize,
    },
}

impl SamplingDistribution {
    pub fn gaussian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(KsdError::InvalidParameter("dimension must be ≥ 1".into()));
        }
        Ok(Self::Gaussian { dim })
    }

    pub fn product_laplace(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(KsdError::InvalidParameter("dimension must be ≥ 1".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "Laplace scale must be positive, got {scale}"
            )));
        }
        Ok(Self::ProductLaplace { dim, scale })
    }

    pub fn student_t(dim: usize, dof: f64) -> Result<Self> {
        if dim == 0 {
            return Err(KsdError::InvalidParameter("dimension must be ≥ 1".into()));
        }
        if !(dof.is_finite() && dof > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "degrees of freedom must be positive, got {dof}"
            )));
        }
        Ok(Self::StudentT { dim, dof })
    }

    /// Gibbs chain for an RBM model with the default burn-in and thinning.
    pub fn rbm_gibbs(model: ScoreModel) -> Result<Self> {
        Self::rbm_gibbs_with(model, GIBBS_BURN_IN, GIBBS_THINNING)
    }

    pub fn rbm_gibbs_with(model: ScoreModel, burn_in: usize, thinning: usize) -> Result<Self> {
        if !matches!(model, ScoreModel::GaussBernoulliRbm { .. }) {
            return Err(KsdError::InvalidParameter(
                "Gibbs sampling requires an RBM score model".into(),
            ));
        }
        if thinning == 0 {
            return Err(KsdError::InvalidParameter("thinning must be ≥ 1".into()));
        }
        Ok(Self::RbmGibbs {
            model,
            burn_in,
            thinning,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { dim }
            | Self::ProductLaplace { dim, .. }
            | Self::StudentT { dim, .. } => *dim,
            Self::RbmGibbs { model, .. } => model.dim(),
        }
    }

    /// Draws n observations; identical seeds give bitwise-identical output.
    pub fn draw_samples(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(KsdError::EmptySampleSet);
        }
        let d = self.dim();
        let mut rng = rng_from_seed(seed);
        let mut flat = vec![0.0; n * d];
        match self {
            Self::Gaussian { .. } => {
                for v in flat.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
            Self::ProductLaplace { scale, .. } => {
                // Laplace(0, s) as the difference of two Exp(1) draws scaled by s.
                for v in flat.iter_mut() {
                    let e1: f64 = Exp1.sample(&mut rng);
                    let e2: f64 = Exp1.sample(&mut rng);
                    *v = scale * (e1 - e2);
                }
            }
            Self::StudentT { dof, .. } => {
                let chi = ChiSquared::new(*dof).expect("dof validated at construction");
                for row in flat.chunks_mut(d) {
                    let w: f64 = chi.sample(&mut rng);
                    let factor = (dof / w).sqrt();
                    for v in row.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = factor * z;
                    }
                }
            }
            Self::RbmGibbs {
                model,
                burn_in,
                thinning,
            } => {
                let ScoreModel::GaussBernoulliRbm {
                    weights,
                    visible_bias,
                    hidden_bias,
                } = model
                else {
                    unreachable!("validated at construction");
                };
                let (d_hidden, d_visible) = weights.dim();
                let w = weights.as_slice().expect("weights are standard layout");
                let mut x = vec![0.0; d_visible];
                for v in x.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let mut hidden = vec![0.0; d_hidden];
                let mut sweep = |x: &mut Vec<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
                    // h | x: P(h_j = +1) = sigmoid(2 (Bx + c)_j)
                    for j in 0..d_hidden {
                        let row = &w[j * d_visible..(j + 1) * d_visible];
                        let mut a = hidden_bias[j];
                        for (wk, xk) in row.iter().zip(x.iter()) {
                            a += wk * xk;
                        }
                        let p_plus = 1.0 / (1.0 + (-2.0 * a).exp());
                        hidden[j] = if rng.random::<f64>() < p_plus { 1.0 } else { -1.0 };
                    }
                    // x | h ~ N(b + Bᵀh, I)
                    for i in 0..d_visible {
                        x[i] = visible_bias[i];
                    }
                    for j in 0..d_hidden {
                        let row = &w[j * d_visible..(j + 1) * d_visible];
                        let hj = hidden[j];
                        for (xi, wk) in x.iter_mut().zip(row) {
                            *xi += wk * hj;
                        }
                    }
                    for xi in x.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *xi += z;
                    }
                };
                for _ in 0..*burn_in {
                    sweep(&mut x, &mut rng);
                }
                for row in flat.chunks_mut(d) {
                    for _ in 0..*thinning {
                        sweep(&mut x, &mut rng);
                    }
                    row.copy_from_slice(&x);
                }
            }
        }
        SampleSet::new(Array2::from_shape_vec((n, d), flat).expect("n×d buffer"))
    }
}
