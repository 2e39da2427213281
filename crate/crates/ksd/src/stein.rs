//! The Stein kernel h_p and its Gram machinery.
//!
//! Applying the Langevin Stein operator to a base kernel k in both arguments
//! yields, with s = ∇ log p,
//!
//! ```text
//! h_p(x, y) = ⟨s(x), s(y)⟩ k(x, y) + ⟨s(y), ∇ₓk⟩ + ⟨s(x), ∇_yk⟩ + Σᵢ ∂²k/∂xᵢ∂yᵢ.
//! ```
//!
//! For the radial kernels here, ∇ₓk = g(r²)(x − y) and ∇_yk = −g(r²)(x − y),
//! so a Gram entry costs three d-dimensional dot products plus scalar profile
//! terms. Scores are computed once per assembly and reused across the block;
//! blocks are built in row panels, evaluated in parallel.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{KsdError, Result};
use crate::kernel::KernelParams;
use crate::sample::SampleSet;
use crate::score::ScoreModel;

/// Default rows per assembly panel; panels are processed concurrently and
/// bound the working set of the streaming double-sum path.
pub const DEFAULT_PANEL_ROWS: usize = 256;

/// A base kernel composed with a score model.
#[derive(Debug, Clone)]
pub struct SteinKernel {
    kernel: KernelParams,
    model: ScoreModel,
    panel_rows: usize,
}

/// A rectangular block of Stein-kernel Gram values, tagged with the sample
/// indices that generated it. Square blocks (equal row and column ids) are
/// symmetrized by averaging with their transpose before being returned.
#[derive(Debug, Clone)]
pub struct GramBlock {
    pub values: Array2<f64>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

impl SteinKernel {
    pub fn new(kernel: KernelParams, model: ScoreModel) -> Self {
        Self {
            kernel,
            model,
            panel_rows: DEFAULT_PANEL_ROWS,
        }
    }

    /// Overrides the assembly panel height (rows evaluated per work unit).
    pub fn with_panel_rows(mut self, panel_rows: usize) -> Self {
        self.panel_rows = panel_rows.max(1);
        self
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn model(&self) -> &ScoreModel {
        &self.model
    }

    /// h_p(x, y).
    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.model.dim() {
            return Err(KsdError::DimensionMismatch {
                expected: self.model.dim(),
                got: x.len(),
            });
        }
        let sx = self.model.score(x)?;
        let sy = self.model.score(y)?;
        // Kernel-side validation catches x/y length mismatch and non-finite input.
        self.kernel.value(x, y)?;
        Ok(self.entry(x, y, &sx, &sy))
    }

    /// One Gram entry from precomputed scores.
    #[inline(always)]
    fn entry(&self, x: &[f64], y: &[f64], sx: &[f64], sy: &[f64]) -> f64 {
        let d = x.len();
        let mut r2 = 0.0;
        let mut score_dot = 0.0;
        let mut cross_dot = 0.0;
        for i in 0..d {
            let diff = x[i] - y[i];
            r2 += diff * diff;
            score_dot += sx[i] * sy[i];
            // ⟨s(y), ∇ₓk⟩ + ⟨s(x), ∇_yk⟩ = g(r²)·⟨s(y) − s(x), x − y⟩
            cross_dot += (sy[i] - sx[i]) * diff;
        }
        let t = self.kernel.terms(r2, d);
        score_dot * t.value + t.grad_coeff * cross_dot + t.cross_trace
    }

    /// Gram block over `row_ids` × `col_ids` of one sample set.
    ///
    /// `values[i][j] = h_p(samples[row_ids[i]], samples[col_ids[j]])`.
    pub fn gram_block(
        &self,
        samples: &SampleSet,
        row_ids: &[usize],
        col_ids: &[usize],
    ) -> Result<GramBlock> {
        if row_ids.is_empty() || col_ids.is_empty() {
            return Err(KsdError::EmptySampleSet);
        }
        self.check_dims(samples)?;
        for &id in row_ids.iter().chain(col_ids) {
            if id >= samples.n() {
                return Err(KsdError::IndexOutOfRange {
                    index: id,
                    n: samples.n(),
                });
            }
        }
        let scores = self.model.score_matrix(samples)?;
        let score_flat = scores.as_slice().expect("standard layout");
        let mut values = self.assemble(samples, score_flat, row_ids, col_ids);
        if row_ids == col_ids {
            symmetrize(&mut values);
        }
        Ok(GramBlock {
            values,
            row_ids: row_ids.to_vec(),
            col_ids: col_ids.to_vec(),
        })
    }

    /// Full n×n Gram matrix, symmetrized.
    pub(crate) fn gram_full(&self, samples: &SampleSet) -> Result<Array2<f64>> {
        self.check_dims(samples)?;
        let scores = self.model.score_matrix(samples)?;
        let ids: Vec<usize> = (0..samples.n()).collect();
        let mut values = self.assemble(
            samples,
            scores.as_slice().expect("standard layout"),
            &ids,
            &ids,
        );
        symmetrize(&mut values);
        Ok(values)
    }

    /// m×n cross Gram between landmark rows and the whole sample.
    pub(crate) fn gram_cross(
        &self,
        samples: &SampleSet,
        landmarks: &[usize],
    ) -> Result<Array2<f64>> {
        self.check_dims(samples)?;
        for &id in landmarks {
            if id >= samples.n() {
                return Err(KsdError::IndexOutOfRange {
                    index: id,
                    n: samples.n(),
                });
            }
        }
        let scores = self.model.score_matrix(samples)?;
        let ids: Vec<usize> = (0..samples.n()).collect();
        Ok(self.assemble(
            samples,
            scores.as_slice().expect("standard layout"),
            landmarks,
            &ids,
        ))
    }

    /// Streaming (Σᵢⱼ h_p(xᵢ, xⱼ), Σᵢ h_p(xᵢ, xᵢ)) without materializing the
    /// Gram matrix; memory stays bounded by one panel.
    pub(crate) fn double_sum(&self, samples: &SampleSet) -> Result<(f64, f64)> {
        self.check_dims(samples)?;
        let scores = self.model.score_matrix(samples)?;
        let score_flat = scores.as_slice().expect("standard layout");
        let flat = samples.flat();
        let (n, d) = (samples.n(), samples.dim());
        let (total, diag) = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(self.panel_rows)
            .map(|panel| {
                let mut total = 0.0;
                let mut diag = 0.0;
                for &i in panel {
                    let x = &flat[i * d..(i + 1) * d];
                    let sx = &score_flat[i * d..(i + 1) * d];
                    for j in 0..n {
                        let y = &flat[j * d..(j + 1) * d];
                        let sy = &score_flat[j * d..(j + 1) * d];
                        let v = self.entry(x, y, sx, sy);
                        total += v;
                        if i == j {
                            diag += v;
                        }
                    }
                }
                (total, diag)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        Ok((total, diag))
    }

    fn assemble(
        &self,
        samples: &SampleSet,
        score_flat: &[f64],
        row_ids: &[usize],
        col_ids: &[usize],
    ) -> Array2<f64> {
        let d = samples.dim();
        let flat = samples.flat();
        let (r, s) = (row_ids.len(), col_ids.len());
        let mut buf = vec![0.0; r * s];
        buf.par_chunks_mut(self.panel_rows * s)
            .zip(row_ids.par_chunks(self.panel_rows))
            .for_each(|(panel, panel_rows)| {
                for (local, &i) in panel_rows.iter().enumerate() {
                    let x = &flat[i * d..(i + 1) * d];
                    let sx = &score_flat[i * d..(i + 1) * d];
                    let out = &mut panel[local * s..(local + 1) * s];
                    for (o, &j) in out.iter_mut().zip(col_ids) {
                        let y = &flat[j * d..(j + 1) * d];
                        let sy = &score_flat[j * d..(j + 1) * d];
                        *o = self.entry(x, y, sx, sy);
                    }
                }
            });
        Array2::from_shape_vec((r, s), buf).expect("r×s buffer")
    }

    fn check_dims(&self, samples: &SampleSet) -> Result<()> {
        if samples.dim() != self.model.dim() {
            return Err(KsdError::DimensionMismatch {
                expected: self.model.dim(),
                got: samples.dim(),
            });
        }
        Ok(())
    }
}

/// Averages a square matrix with its transpose in place.
pub(crate) fn symmetrize(values: &mut Array2<f64>) {
    let n = values.nrows();
    debug_assert_eq!(n, values.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let mean = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = mean;
            values[(j, i)] = mean;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::arr2;
    use ndarray_linalg::{Eigh, UPLO};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rbf(gamma: f64, dim: usize) -> SteinKernel {
        SteinKernel::new(
            KernelParams::rbf(gamma).unwrap(),
            ScoreModel::standard_gaussian(dim).unwrap(),
        )
    }

    #[test]
    fn diagonal_matches_analytic_form() {
        // For P = N(0,1), d = 1, RBF(γ): h_p(x, x) = x² + 2γ.
        for gamma in [0.1, 0.5, 2.0] {
            let sk = gaussian_rbf(gamma, 1);
            for x in [-3.0, -0.5, 0.0, 1.7, 4.2] {
                let v = sk.value(&[x], &[x]).unwrap();
                let expect = x * x + 2.0 * gamma;
                assert!((v - expect).abs() <= 1e-12 * expect.abs());
            }
        }
        let sk = gaussian_rbf(0.5, 1);
        assert_eq!(sk.value(&[2.0], &[2.0]).unwrap(), 5.0);
    }

    #[test]
    fn value_at_origin_is_cross_trace() {
        let sk = gaussian_rbf(0.8, 1);
        assert!((sk.value(&[0.0], &[0.0]).unwrap() - 1.6).abs() < 1e-15);

        let imq = SteinKernel::new(
            KernelParams::imq(1.0, -0.5).unwrap(),
            ScoreModel::standard_gaussian(1).unwrap(),
        );
        let ct = imq.kernel().cross_trace(&[0.0], &[0.0]).unwrap();
        assert_eq!(imq.value(&[0.0], &[0.0]).unwrap(), ct);
    }

    #[test]
    fn value_is_symmetric() {
        let mut rng = rng_from_seed(3);
        for sk in [
            gaussian_rbf(0.7, 3),
            SteinKernel::new(
                KernelParams::imq(1.2, -0.3).unwrap(),
                ScoreModel::random_rbm(3, 2, 8).unwrap(),
            ),
        ] {
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let a = sk.value(&x, &y).unwrap();
                let b = sk.value(&y, &x).unwrap();
                let scale = a.abs().max(1e-8);
                assert!((a - b).abs() / scale < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gram_block_single_point() {
        let sk = gaussian_rbf(0.5, 1);
        let samples = SampleSet::new(arr2(&[[2.0]])).unwrap();
        let block = sk.gram_block(&samples, &[0], &[0]).unwrap();
        assert_eq!(block.values[(0, 0)], 5.0);
    }

    #[test]
    fn gram_block_diagonal_example() {
        let sk = gaussian_rbf(0.5, 1);
        let samples = SampleSet::new(arr2(&[[0.0], [2.0]])).unwrap();
        let block = sk.gram_block(&samples, &[0, 1], &[0, 1]).unwrap();
        assert!((block.values[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((block.values[(1, 1)] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn gram_block_matches_looped_values() {
        let mut rng = rng_from_seed(17);
        let sk = SteinKernel::new(
            KernelParams::imq(0.9, -0.4).unwrap(),
            ScoreModel::standard_gaussian(2).unwrap(),
        );
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let samples = SampleSet::from_rows(&rows).unwrap();
        let row_ids = [0usize, 2, 4, 5, 6, 7, 8];
        let col_ids = [1usize, 2, 3, 5, 8];
        let block = sk.gram_block(&samples, &row_ids, &col_ids).unwrap();
        for (bi, &i) in row_ids.iter().enumerate() {
            for (bj, &j) in col_ids.iter().enumerate() {
                let direct = sk.value(samples.row(i), samples.row(j)).unwrap();
                assert!((block.values[(bi, bj)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_gram_is_exactly_symmetric_and_psd() {
        let mut rng = rng_from_seed(29);
        let n = 50;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let samples = SampleSet::from_rows(&rows).unwrap();
        let sk = gaussian_rbf(0.5, 2);
        let ids: Vec<usize> = (0..n).collect();
        let block = sk.gram_block(&samples, &ids, &ids).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(block.values[(i, j)], block.values[(j, i)]);
                assert!(block.values[(i, j)].is_finite());
            }
        }
        let (eigs, _) = block.values.eigh(UPLO::Lower).unwrap();
        let lambda_max = eigs[n - 1];
        assert!(eigs[0] >= -1e-8 * lambda_max, "min eig {}", eigs[0]);
    }

    #[test]
    fn base_kernel_gram_is_psd() {
        // Positive-definiteness smoke test for the base kernels themselves.
        let mut rng = rng_from_seed(31);
        for kernel in [
            KernelParams::rbf(0.6).unwrap(),
            KernelParams::imq(1.0, -0.5).unwrap(),
        ] {
            let n = 40;
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-4.0..4.0)).collect())
                .collect();
            let gram = Array2::from_shape_fn((n, n), |(i, j)| {
                kernel.value(&pts[i], &pts[j]).unwrap()
            });
            let (eigs, _) = gram.eigh(UPLO::Lower).unwrap();
            assert!(eigs[0] >= -1e-8 * eigs[n - 1], "min eig {}", eigs[0]);
        }
    }

    #[test]
    fn zero_mean_under_target() {
        // E_{X~P} h_p(X, y) = 0 for any fixed y when P is the score model's law.
        let mut rng = rng_from_seed(41);
        for d in [1usize, 2] {
            let sk = gaussian_rbf(0.5, d);
            let n = 100_000;
            let probes: Vec<Vec<f64>> = vec![vec![0.3; d], vec![-1.0; d], vec![2.0; d]];
            for y in &probes {
                let sy = sk.model().score(y).unwrap();
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                let mut x = vec![0.0; d];
                for _ in 0..n {
                    for xi in x.iter_mut() {
                        *xi = StandardNormal.sample(&mut rng);
                    }
                    let sx = sk.model().score(&x).unwrap();
                    let v = sk.entry(&x, y, &sx, &sy);
                    sum += v;
                    sum_sq += v * v;
                }
                let mean = sum / n as f64;
                let var = (sum_sq / n as f64 - mean * mean).max(0.0);
                let se = (var / n as f64).sqrt();
                assert!(
                    mean.abs() <= 5.0 * se,
                    "d={d}, probe {y:?}: mean {mean} vs se {se}"
                );
            }
        }
    }

    #[test]
    fn panel_height_does_not_change_values() {
        let samples = SampleSet::new(Array2::from_shape_fn((37, 2), |(i, j)| {
            ((i * 2 + j) as f64 * 0.31).sin()
        }))
        .unwrap();
        let ids: Vec<usize> = (0..37).collect();
        let wide = gaussian_rbf(0.4, 2);
        let narrow = gaussian_rbf(0.4, 2).with_panel_rows(5);
        let a = wide.gram_block(&samples, &ids, &ids).unwrap();
        let b = narrow.gram_block(&samples, &ids, &ids).unwrap();
        assert_eq!(a.values, b.values);
        let (ta, da) = wide.double_sum(&samples).unwrap();
        let (tb, db) = narrow.double_sum(&samples).unwrap();
        assert!((ta - tb).abs() <= 1e-12 * ta.abs());
        assert!((da - db).abs() <= 1e-12 * da.abs());
    }

    #[test]
    fn custom_score_composes_with_stein_kernel() {
        // A hand-rolled score for N(mu, I): s(x) = mu - x.
        let mu = [0.8, -0.4];
        let custom = ScoreModel::custom(2, move |x, out| {
            for ((o, xi), m) in out.iter_mut().zip(x).zip(mu) {
                *o = m - xi;
            }
        })
        .unwrap();
        let sk = SteinKernel::new(KernelParams::rbf(0.5).unwrap(), custom);
        // At x = mu the score vanishes, so h_p(mu, mu) is the cross trace 2γd.
        let v = sk.value(&mu, &mu).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        // Same Stein kernel as the built-in Gaussian target after shifting.
        let builtin = gaussian_rbf(0.5, 2);
        let x = [1.1, 0.3];
        let y = [-0.2, 0.9];
        let shifted_x = [x[0] - mu[0], x[1] - mu[1]];
        let shifted_y = [y[0] - mu[0], y[1] - mu[1]];
        let a = sk.value(&x, &y).unwrap();
        let b = builtin.value(&shifted_x, &shifted_y).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn errors_propagate() {
        let sk = gaussian_rbf(1.0, 2);
        let samples = SampleSet::new(arr2(&[[0.0, 1.0]])).unwrap();
        assert!(matches!(
            sk.gram_block(&samples, &[], &[0]),
            Err(KsdError::EmptySampleSet)
        ));
        assert!(matches!(
            sk.gram_block(&samples, &[0], &[3]),
            Err(KsdError::IndexOutOfRange { .. })
        ));
        let mismatched = SampleSet::new(arr2(&[[0.0]])).unwrap();
        assert!(matches!(
            sk.gram_block(&mismatched, &[0], &[0]),
            Err(KsdError::DimensionMismatch { .. })
        ));
    }
}
