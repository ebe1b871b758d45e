//! Fréchet Inception Distance and Fréchet Medoid Distance.
//!
//! FID compares Gaussian fits of two feature sets:
//! `|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2})`. The trace of the
//! product square root is evaluated through the symmetric matrix
//! `S_r^{1/2} S_g S_r^{1/2}`, whose eigenvalues are real and non-negative up
//! to rounding, so no non-symmetric eigensolver is ever involved.
//!
//! FMD is the mean Euclidean distance from each generated sample to the
//! medoid of the real set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::feature_store::FeatureSet;

/// Diagonal jitter added to both covariances when either is singular.
pub const SINGULAR_JITTER: f64 = 1e-6;
/// A covariance is singular when `lambda_min <= SINGULAR_RATIO * lambda_max`.
pub const SINGULAR_RATIO: f64 = 1e-10;
/// Most negative eigenvalue (relative to `max(1, lambda_max)`) tolerated on
/// inputs before they are rejected rather than clamped.
pub const EIGEN_NEGATIVE_TOLERANCE: f64 = 1e-8;
/// Asymmetry tolerated on inputs, relative to `max(1, max |a_ij|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
/// FID values in `[-FID_CLAMP, 0)` are rounding noise and clamped to zero.
pub const FID_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("covariance needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("matrix contains a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("matrix is not positive semi-definite: eigenvalue {0:e}")]
    NotPositiveSemidefinite(f64),
    #[error("FID evaluated to {0:e}, below the rounding tolerance")]
    NegativeDistance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    /// Builds stats from explicit moments, symmetrizing the covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self, MetricsError> {
        if n < 2 {
            return Err(MetricsError::TooFewSamples(n));
        }
        if !cov.is_square() {
            return Err(MetricsError::NotSquare(cov.nrows(), cov.ncols()));
        }
        if cov.nrows() != mean.len() {
            return Err(MetricsError::DimensionMismatch(mean.len(), cov.nrows()));
        }
        check_finite(&cov)?;
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianStats { mean, cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-dimension mean and unbiased (`n - 1`) covariance.
pub fn gaussian_stats(fs: &FeatureSet) -> Result<GaussianStats, MetricsError> {
    let n = fs.n();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let d = fs.dim;
    let x = DMatrix::from_row_iterator(n, d, fs.data().iter().map(|&v| f64::from(v)));
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    GaussianStats::new(mean, cov, n)
}

fn check_finite(a: &DMatrix<f64>) -> Result<(), MetricsError> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(MetricsError::NonFinite(i, j));
            }
        }
    }
    Ok(())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    if !a.is_square() {
        return Err(MetricsError::NotSquare(a.nrows(), a.ncols()));
    }
    check_finite(a)?;
    let scale = a.amax().max(1.0);
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            if diff > SYMMETRY_TOLERANCE * scale {
                return Err(MetricsError::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Eigendecomposition of a symmetric PSD input with small negative
/// eigenvalues clamped to zero.
struct PsdEigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl PsdEigen {
    fn new(a: DMatrix<f64>) -> Result<Self, MetricsError> {
        let eig = SymmetricEigen::new(a);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -EIGEN_NEGATIVE_TOLERANCE * max.max(1.0) {
            return Err(MetricsError::NotPositiveSemidefinite(min));
        }
        Ok(PsdEigen {
            values: eig.eigenvalues.map(|v| v.max(0.0)),
            vectors: eig.eigenvectors,
        })
    }

    fn is_singular(&self) -> bool {
        // `<=` so that an all-zero covariance counts as singular
        self.values.min() <= SINGULAR_RATIO * self.values.max()
    }

    /// `V diag(sqrt(lambda + shift)) V^T`
    fn sqrt(&self, shift: f64) -> DMatrix<f64> {
        let roots = self.values.map(|v| (v + shift).sqrt());
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * roots[j]
        });
        &scaled * self.vectors.transpose()
    }
}

/// `Tr((a^{1/2} b a^{1/2})^{1/2})` given `a`'s eigendecomposition.
fn trace_sqrt_product(a: &PsdEigen, a_shift: f64, b: &DMatrix<f64>) -> f64 {
    let root = a.sqrt(a_shift);
    let m = &root * b * &root;
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum()
}

/// `Tr((a b)^{1/2})` for symmetric positive semi-definite `a` and `b`.
pub fn sqrtm_trace(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::DimensionMismatch(a.nrows(), b.nrows()));
    }
    let a = check_symmetric(a)?;
    let b = check_symmetric(b)?;
    PsdEigen::new(b.clone())?;
    let ea = PsdEigen::new(a)?;
    Ok(trace_sqrt_product(&ea, 0.0, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidResult {
    pub value: f64,
    /// `|mu_r - mu_g|^2`
    pub mean_term: f64,
    /// `Tr(S_r + S_g - 2 (S_r S_g)^{1/2})`
    pub trace_term: f64,
    /// Jitter added to both covariance diagonals, 0 if none.
    pub jitter_applied: f64,
    /// Set when a tiny negative value was clamped to 0.
    pub clamped: bool,
}

pub fn fid(real: &GaussianStats, gen: &GaussianStats) -> Result<FidResult, MetricsError> {
    if real.dim() != gen.dim() {
        return Err(MetricsError::DimensionMismatch(real.dim(), gen.dim()));
    }
    let d = real.dim() as f64;
    let cov_r = check_symmetric(&real.cov)?;
    let cov_g = check_symmetric(&gen.cov)?;
    let eig_r = PsdEigen::new(cov_r.clone())?;
    let eig_g = PsdEigen::new(cov_g.clone())?;

    let jitter = if eig_r.is_singular() || eig_g.is_singular() {
        SINGULAR_JITTER
    } else {
        0.0
    };
    let mut cov_g = cov_g;
    if jitter > 0.0 {
        for i in 0..cov_g.nrows() {
            cov_g[(i, i)] += jitter;
        }
    }
    let tr_sqrt = trace_sqrt_product(&eig_r, jitter, &cov_g);

    let mean_term = (&real.mean - &gen.mean).norm_squared();
    let mut trace_term = cov_r.trace() + cov_g.trace() + d * jitter - 2.0 * tr_sqrt;
    let mut value = mean_term + trace_term;
    let mut clamped = false;
    if value < 0.0 {
        if value < -FID_CLAMP {
            return Err(MetricsError::NegativeDistance(value));
        }
        value = 0.0;
        trace_term = -mean_term;
        clamped = true;
    }
    Ok(FidResult {
        value,
        mean_term,
        trace_term,
        jitter_applied: jitter,
        clamped,
    })
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Row of `real` minimizing the summed Euclidean distance to all rows.
/// Ties go to the lowest index.
pub fn medoid(real: &FeatureSet) -> (String, usize) {
    // each sum is computed sequentially in row order, so parallelism cannot
    // change any value and the argmin below is deterministic
    let sums: Vec<f64> = (0..real.n())
        .into_par_iter()
        .map(|i| {
            let row = real.row(i);
            real.rows().map(|other| euclidean(row, other)).sum()
        })
        .collect();
    let mut best = 0;
    for (i, &s) in sums.iter().enumerate().skip(1) {
        if s < sums[best] {
            best = i;
        }
    }
    (real.ids[best].clone(), best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmdResult {
    pub value: f64,
    pub medoid_id: String,
    pub medoid_index: usize,
    pub per_sample: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl FmdResult {
    pub fn summary(&self) -> DistanceSummary {
        let mut d: Vec<f64> = self.per_sample.iter().map(|(_, v)| *v).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        let median = if n % 2 == 1 {
            d[n / 2]
        } else {
            (d[n / 2 - 1] + d[n / 2]) / 2.0
        };
        DistanceSummary {
            min: d[0],
            median,
            max: d[n - 1],
        }
    }
}

pub fn fmd(real: &FeatureSet, gen: &FeatureSet) -> Result<FmdResult, MetricsError> {
    if real.dim != gen.dim {
        return Err(MetricsError::DimensionMismatch(real.dim, gen.dim));
    }
    let (medoid_id, medoid_index) = medoid(real);
    Ok(fmd_to_row(real.row(medoid_index), medoid_id, medoid_index, gen))
}

fn fmd_to_row(center: &[f32], medoid_id: String, medoid_index: usize, gen: &FeatureSet) -> FmdResult {
    let per_sample: Vec<(String, f64)> = gen
        .ids
        .iter()
        .zip(gen.rows())
        .map(|(id, row)| (id.clone(), euclidean(center, row)))
        .collect();
    let value = per_sample.iter().map(|(_, d)| d).sum::<f64>() / per_sample.len() as f64;
    FmdResult {
        value,
        medoid_id,
        medoid_index,
        per_sample,
    }
}
