//! Class-conditional Gaussian mixture over the classifier's feature space.
//!
//! One full-covariance Gaussian per class, fitted by moment matching on the
//! training features, mixed with uniform weights 1/|C|. The negative
//! log-likelihood of a feature vector under the mixture is the epistemic
//! uncertainty score, and doubles as the realism proxy for counterfactuals.

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Factorization failure retries; each multiplies the jitter by 10.
const JITTER_RETRIES: usize = 3;

const LN_2PI: f64 = 1.8378770664093453;

/// Covariance regularization knobs: the diagonal jitter added at fit time is
/// `max(jitter_rel · trace(Σ)/dim, jitter_floor)`.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub jitter_rel: f64,
    pub jitter_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            jitter_rel: 1e-4,
            jitter_floor: 1e-8,
        }
    }
}

/// Per-class Gaussian parameters plus the uniform mixture.
///
/// Covariances are stored as fitted (jitter included); precisions and
/// log-normalizers are precomputed from a Cholesky factorization.
#[derive(Debug, Clone)]
pub struct FeatureGMM {
    dim: usize,
    means: Vec<Vec<f64>>,
    covs: Vec<Mat>,
    precisions: Vec<Mat>,
    /// -0.5 * (dim * ln 2π + ln det Σ_c) per class.
    log_norms: Vec<f64>,
    /// 95th-percentile training NLL, recorded at fit time; used as the
    /// in-distribution threshold by the realism report.
    nll_p95: Option<f64>,
}

impl FeatureGMM {
    /// Fit one Gaussian per class from labeled feature rows.
    ///
    /// `features` is row-major N×dim; every class in `0..class_count` must be
    /// present with at least `dim + 1` samples. Covariances are the biased
    /// sample covariance (divide by the class count) plus a small diagonal
    /// jitter so low-rank feature clouds still factorize.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], class_count: usize) -> Result<Self> {
        Self::fit_with(features, labels, class_count, &FitOptions::default())
    }

    /// [`FeatureGMM::fit`] with explicit regularization knobs.
    pub fn fit_with(
        features: &[Vec<f64>],
        labels: &[usize],
        class_count: usize,
        opts: &FitOptions,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: features.len(),
                got: labels.len(),
            });
        }
        let dim = features[0].len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "feature row",
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "feature input to GMM fit",
                });
            }
            if labels[i] >= class_count {
                return Err(Error::ClassOutOfRange {
                    class: labels[i],
                    class_count,
                });
            }
        }

        let mut means = Vec::with_capacity(class_count);
        let mut covs = Vec::with_capacity(class_count);
        for class in 0..class_count {
            let members: Vec<&Vec<f64>> = features
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(f, _)| f)
                .collect();
            let n = members.len();
            if n < dim + 1 {
                return Err(Error::GmmClassTooSmall {
                    class,
                    have: n,
                    need: dim + 1,
                });
            }

            let mut mean = vec![0.0; dim];
            for row in &members {
                for (m, v) in mean.iter_mut().zip(row.iter()) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }

            let mut cov = Mat::zeros(dim, dim);
            let mut delta = vec![0.0; dim];
            for row in &members {
                for ((d, v), m) in delta.iter_mut().zip(row.iter()).zip(&mean) {
                    *d = v - m;
                }
                cov.add_outer(&delta, &delta, 1.0);
            }
            cov.scale(1.0 / n as f64);

            let trace: f64 = (0..dim).map(|i| cov.get(i, i)).sum();
            let jitter = (opts.jitter_rel * trace / dim as f64).max(opts.jitter_floor);
            for i in 0..dim {
                cov.set(i, i, cov.get(i, i) + jitter);
            }

            means.push(mean);
            covs.push(cov);
        }

        Self::from_parts_with(means, covs, opts)
    }

    /// Rebuild the mixture from persisted means and covariances.
    ///
    /// Covariances are factorized as stored; if a factorization fails, the
    /// jitter escalation from `fit` is reapplied.
    pub fn from_parts(means: Vec<Vec<f64>>, covs: Vec<Mat>) -> Result<Self> {
        Self::from_parts_with(means, covs, &FitOptions::default())
    }

    pub fn from_parts_with(
        means: Vec<Vec<f64>>,
        covs: Vec<Mat>,
        opts: &FitOptions,
    ) -> Result<Self> {
        assert_eq!(means.len(), covs.len());
        let dim = means.first().map(|m| m.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::EmptyBatch);
        }

        let mut precisions = Vec::with_capacity(covs.len());
        let mut log_norms = Vec::with_capacity(covs.len());
        let mut covs_out = Vec::with_capacity(covs.len());
        for (class, cov) in covs.into_iter().enumerate() {
            let (cov, chol) = factorize_with_retries(cov, class, opts)?;
            let log_det = 2.0 * (0..dim).map(|i| chol.get(i, i).ln()).sum::<f64>();
            log_norms.push(-0.5 * (dim as f64 * LN_2PI + log_det));
            precisions.push(invert_from_cholesky(&chol));
            covs_out.push(cov);
        }

        Ok(Self {
            dim,
            means,
            covs: covs_out,
            precisions,
            log_norms,
            nll_p95: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class]
    }

    pub fn covariance(&self, class: usize) -> &Mat {
        &self.covs[class]
    }

    pub fn nll_p95(&self) -> Option<f64> {
        self.nll_p95
    }

    pub fn set_nll_p95(&mut self, v: f64) {
        self.nll_p95 = Some(v);
    }

    /// log N(z; μ_t, Σ_t). Positive values are possible where the density
    /// exceeds one.
    pub fn log_density_class(&self, z: &[f64], class: usize) -> Result<f64> {
        self.check_query(z, class)?;
        let delta: Vec<f64> = z
            .iter()
            .zip(&self.means[class])
            .map(|(a, b)| a - b)
            .collect();
        let pd = self.precisions[class].matvec(&delta);
        let quad: f64 = delta.iter().zip(&pd).map(|(a, b)| a * b).sum();
        Ok(self.log_norms[class] - 0.5 * quad)
    }

    /// ∇_z log N(z; μ_t, Σ_t) = -Σ_t⁻¹ (z - μ_t). Exactly zero at z = μ_t.
    pub fn grad_log_density_class(&self, z: &[f64], class: usize) -> Result<Vec<f64>> {
        self.check_query(z, class)?;
        let delta: Vec<f64> = z
            .iter()
            .zip(&self.means[class])
            .map(|(a, b)| a - b)
            .collect();
        let mut g = self.precisions[class].matvec(&delta);
        for v in &mut g {
            *v = -*v;
        }
        Ok(g)
    }

    /// Negative log-likelihood of `z` under the uniform mixture, computed
    /// with log-sum-exp over the per-class log densities. Lower means more
    /// in-distribution.
    pub fn epistemic_nll(&self, z: &[f64]) -> Result<f64> {
        let logs: Vec<f64> = (0..self.class_count())
            .map(|c| self.log_density_class(z, c))
            .collect::<Result<_>>()?;
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Ok((self.class_count() as f64).ln() - lse)
    }

    fn check_query(&self, z: &[f64], class: usize) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.dim,
                got: z.len(),
            });
        }
        if class >= self.class_count() {
            return Err(Error::ClassOutOfRange {
                class,
                class_count: self.class_count(),
            });
        }
        Ok(())
    }
}

/// Cholesky with jitter escalation: on failure, add 10x the base jitter to
/// the diagonal and retry, up to `JITTER_RETRIES` times.
fn factorize_with_retries(mut cov: Mat, class: usize, opts: &FitOptions) -> Result<(Mat, Mat)> {
    let dim = cov.rows;
    let trace: f64 = (0..dim).map(|i| cov.get(i, i)).sum();
    let base = (opts.jitter_rel * trace / dim as f64).max(opts.jitter_floor);
    let mut extra = base * 10.0;
    for attempt in 0..=JITTER_RETRIES {
        if let Some(chol) = cholesky(&cov) {
            return Ok((cov, chol));
        }
        if attempt == JITTER_RETRIES {
            break;
        }
        for i in 0..dim {
            cov.set(i, i, cov.get(i, i) + extra);
        }
        extra *= 10.0;
    }
    Err(Error::GmmFactorization {
        class,
        attempts: JITTER_RETRIES,
    })
}

/// Lower-triangular Cholesky factor L with cov = L·Lᵀ, or None if the matrix
/// is not numerically positive definite.
fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// (L·Lᵀ)⁻¹ by forward/back substitution against identity columns.
fn invert_from_cholesky(l: &Mat) -> Mat {
    let n = l.rows;
    let mut inv = Mat::zeros(n, n);
    let mut y = vec![0.0; n];
    let mut x = vec![0.0; n];
    for col in 0..n {
        // L y = e_col
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l.get(i, k) * y[k];
            }
            y[i] = sum / l.get(i, i);
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= l.get(k, i) * x[k];
            }
            x[i] = sum / l.get(i, i);
        }
        for i in 0..n {
            inv.set(i, col, x[i]);
        }
    }
    // Symmetrize: substitution roundoff can leave the two triangles a few
    // ulps apart, and downstream code assumes exact symmetry.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, s);
            inv.set(j, i, s);
        }
    }
    inv
}
