//! Differentiable base kernels on ℝᵈ.
//!
//! Both supported kernels are radial: k(x, y) = φ(‖x − y‖²) for a smooth
//! profile φ, so every derivative quantity the Stein kernel needs reduces to
//! φ′ and φ″ evaluated at the squared distance:
//!
//! - ∇ₓ k(x, y) = 2 φ′(r²) (x − y),
//! - Σᵢ ∂²k/∂xᵢ∂yᵢ = −2d φ′(r²) − 4 r² φ″(r²).
//!
//! Derivatives are closed-form, not numeric: Gram assembly is the hot loop and
//! finite differences are reserved for test oracles.

use crate::error::{KsdError, Result};

/// Base kernel with validated parameters.
///
/// - `Rbf`: k(x, y) = exp(−γ‖x−y‖²), γ > 0.
/// - `Imq`: k(x, y) = (c² + ‖x−y‖²)^θ, c > 0 and θ ∈ (−1, 0). The paper
///   convention "c = 1, β = −1/2" for (c² + r²)^{−β} maps to θ = −0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelParams {
    Rbf { gamma: f64 },
    Imq { c: f64, theta: f64 },
}

/// Scalar quantities of a radial kernel at one squared distance.
///
/// `grad_coeff` is 2φ′(r²), so ∇ₓk = grad_coeff · (x − y); `cross_trace` is
/// Σᵢ ∂²k/∂xᵢ∂yᵢ for the given ambient dimension.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RadialTerms {
    pub value: f64,
    pub grad_coeff: f64,
    pub cross_trace: f64,
}

impl KernelParams {
    /// Gaussian kernel exp(−γ‖x−y‖²).
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "RBF gamma must be a positive real, got {gamma}"
            )));
        }
        Ok(Self::Rbf { gamma })
    }

    /// Inverse multiquadric kernel (c² + ‖x−y‖²)^θ with θ ∈ (−1, 0).
    pub fn imq(c: f64, theta: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "IMQ c must be a positive real, got {c}"
            )));
        }
        if !(theta.is_finite() && theta > -1.0 && theta < 0.0) {
            return Err(KsdError::InvalidParameter(format!(
                "IMQ theta must lie in (-1, 0), got {theta}"
            )));
        }
        Ok(Self::Imq { c, theta })
    }

    /// k(x, y).
    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let r2 = validated_sq_dist(x, y)?;
        Ok(self.terms(r2, x.len()).value)
    }

    /// ∇ₓ k(x, y).
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let r2 = validated_sq_dist(x, y)?;
        let coeff = self.terms(r2, x.len()).grad_coeff;
        Ok(x.iter().zip(y).map(|(xi, yi)| coeff * (xi - yi)).collect())
    }

    /// Σᵢ ∂²k(x, y)/∂xᵢ∂yᵢ.
    pub fn cross_trace(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let r2 = validated_sq_dist(x, y)?;
        Ok(self.terms(r2, x.len()).cross_trace)
    }

    /// All scalar terms at squared distance `r2` in dimension `d`.
    #[inline(always)]
    pub(crate) fn terms(&self, r2: f64, d: usize) -> RadialTerms {
        let d = d as f64;
        match *self {
            Self::Rbf { gamma } => {
                // φ = e^{−γu}: φ′ = −γφ, φ″ = γ²φ.
                let value = (-gamma * r2).exp();
                RadialTerms {
                    value,
                    grad_coeff: -2.0 * gamma * value,
                    cross_trace: (2.0 * gamma * d - 4.0 * gamma * gamma * r2) * value,
                }
            }
            Self::Imq { c, theta } => {
                // φ = u^θ at u = c² + r²: φ′ = θu^{θ−1}, φ″ = θ(θ−1)u^{θ−2}.
                let u = c * c + r2;
                let pow_m1 = u.powf(theta - 1.0);
                RadialTerms {
                    value: pow_m1 * u,
                    grad_coeff: 2.0 * theta * pow_m1,
                    cross_trace: -2.0 * theta * d * pow_m1
                        - 4.0 * theta * (theta - 1.0) * r2 * pow_m1 / u,
                }
            }
        }
    }
}

/// Squared Euclidean distance with dimension and finiteness validation.
fn validated_sq_dist(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(KsdError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    for (col, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(KsdError::NonFinite { row: 0, col });
        }
    }
    for (col, &v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(KsdError::NonFinite { row: 1, col });
        }
    }
    Ok(sq_dist(x, y))
}

#[inline(always)]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let diff = xi - yi;
        acc += diff * diff;
    }
    acc
}
