//! Two-covariance PLDA and its bilinear verification score.

use nalgebra::{DMatrix, DVector};

use crate::data::class_indices;
use crate::error::{Error, Result};
use crate::linalg::{dot, log_det_spd, psd_clip, spd_inverse, symmetrize};

const WITHIN_RIDGE: f64 = 1e-9;

/// Generative two-covariance model: `x = y + e`, `y ~ N(m, B)` per speaker,
/// `e ~ N(0, W)` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoCovModel {
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl TwoCovModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Coefficients of
/// `s = 2·x1ᵀΛx2 + x1ᵀΓx1 + x2ᵀΓx2 + (x1 + x2)ᵀc + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaScorer {
    pub lambda: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub c: DVector<f64>,
    pub k: f64,
}

/// Per-side quantities that make a trial score O(d).
#[derive(Debug, Clone)]
pub struct PreparedSide {
    pub x: DVector<f64>,
    lx: DVector<f64>,
    quad: f64,
    lin: f64,
}

impl PldaScorer {
    pub fn zeros(dim: usize) -> Self {
        PldaScorer {
            lambda: DMatrix::zeros(dim, dim),
            gamma: DMatrix::zeros(dim, dim),
            c: DVector::zeros(dim),
            k: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn prepare(&self, x: DVector<f64>) -> Result<PreparedSide> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let lx = &self.lambda * &x;
        let quad = dot(x.as_slice(), (&self.gamma * &x).as_slice());
        let lin = dot(x.as_slice(), self.c.as_slice());
        Ok(PreparedSide { x, lx, quad, lin })
    }

    /// Score of two prepared sides. The bilinear term is evaluated as
    /// `x1ᵀΛx2 + x2ᵀΛx1`, so the result is exactly symmetric.
    pub fn score_prepared(&self, a: &PreparedSide, b: &PreparedSide) -> f64 {
        let cross = dot(a.x.as_slice(), b.lx.as_slice()) + dot(b.x.as_slice(), a.lx.as_slice());
        cross + (a.quad + b.quad) + (a.lin + b.lin) + self.k
    }

    pub fn score(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let a = self.prepare(DVector::from_column_slice(x1))?;
        let b = self.prepare(DVector::from_column_slice(x2))?;
        Ok(self.score_prepared(&a, &b))
    }
}

/// Free function form of [`PldaScorer::score`].
pub fn plda_score(x1: &[f64], x2: &[f64], s: &PldaScorer) -> Result<f64> {
    s.score(x1, x2)
}

/// Closed-form moment estimate of a two-covariance model from labelled rows.
///
/// `W` pools within-class scatter over all samples; `B` is the covariance of
/// the (equally weighted) class means minus `W` times the average inverse
/// class size, with negative eigenvalues clipped. Classes with a single sample
/// are ignored.
pub fn fit_two_cov(x: &DMatrix<f64>, labels: &[&str]) -> Result<TwoCovModel> {
    let (n, dim) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let (class_of, n_classes) = class_indices(labels.iter().copied());
    let mut counts = vec![0usize; n_classes];
    for &c in &class_of {
        counts[c] += 1;
    }
    let kept: Vec<usize> = (0..n_classes).filter(|&c| counts[c] >= 2).collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "PLDA needs at least 2 classes with 2+ samples, found {}",
            kept.len()
        )));
    }

    let mut sums = DMatrix::<f64>::zeros(n_classes, dim);
    for i in 0..n {
        let mut r = sums.row_mut(class_of[i]);
        r += x.row(i);
    }
    let mut mean = DVector::<f64>::zeros(dim);
    let mut n_used = 0usize;
    let mut within = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        let c = class_of[i];
        if counts[c] < 2 {
            continue;
        }
        n_used += 1;
        mean += x.row(i).transpose();
        let d = (x.row(i) - sums.row(c) / counts[c] as f64).transpose();
        within += &d * d.transpose();
    }
    mean /= n_used as f64;
    within /= n_used as f64;

    let class_means: Vec<DVector<f64>> = kept
        .iter()
        .map(|&c| (sums.row(c) / counts[c] as f64).transpose())
        .collect();
    let s = kept.len() as f64;
    let mbar = class_means.iter().fold(DVector::zeros(dim), |acc, m| acc + m) / s;
    let mut means_cov = DMatrix::<f64>::zeros(dim, dim);
    for m in &class_means {
        let d = m - &mbar;
        means_cov += &d * d.transpose();
    }
    means_cov /= s;
    let inv_size = kept.iter().map(|&c| 1.0 / counts[c] as f64).sum::<f64>() / s;

    let trace = within.trace();
    if !(trace > 0.0) {
        return Err(Error::Singular("within-class covariance is zero".into()));
    }
    for i in 0..dim {
        within[(i, i)] += WITHIN_RIDGE * trace / dim as f64;
    }
    within = symmetrize(&within);
    crate::linalg::cholesky(&within, "within-class covariance")?;
    let between = psd_clip(&(means_cov - &within * inv_size));
    Ok(TwoCovModel {
        between,
        within,
        mean,
    })
}

/// Bilinear score coefficients giving the exact same-vs-different speaker
/// LLR of a two-covariance model.
///
/// With `T = B + W` and `S = W + 2B`, the same-speaker joint precision
/// block-diagonalizes into `S⁻¹` and `W⁻¹`, which gives
/// `Λ = (W⁻¹ − S⁻¹)/4`, `Γ = T⁻¹/2 − (S⁻¹ + W⁻¹)/4` for centered inputs.
pub fn two_cov_to_scorer(model: &TwoCovModel) -> Result<PldaScorer> {
    let w_inv = spd_inverse(&model.within, "within-class covariance")?;
    let total = &model.between + &model.within;
    let same = &model.within + &model.between * 2.0;
    let t_inv = spd_inverse(&total, "total covariance")?;
    let s_inv = spd_inverse(&same, "same-speaker covariance")?;

    let lambda = symmetrize(&((&w_inv - &s_inv) * 0.25));
    let gamma = symmetrize(&(&t_inv * 0.5 - (&s_inv + &w_inv) * 0.25));
    let k0 = 0.5
        * (2.0 * log_det_spd(&total, "total covariance")?
            - log_det_spd(&same, "same-speaker covariance")?
            - log_det_spd(&model.within, "within-class covariance")?);
    let lg = &lambda + &gamma;
    let c = -(&lg * &model.mean) * 2.0;
    let k = k0 + 2.0 * dot(model.mean.as_slice(), (&lg * &model.mean).as_slice());
    Ok(PldaScorer {
        lambda,
        gamma,
        c,
        k,
    })
}
