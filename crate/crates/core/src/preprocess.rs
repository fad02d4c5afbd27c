//! LDA front-end: scaled projection, centering and length normalization.

use nalgebra::{DMatrix, DVector};

use crate::data::class_indices;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, length_normalize, sym_eigen_desc};

/// Within-class ridge, relative to the mean within-class variance.
pub const WITHIN_RIDGE: f64 = 1e-6;

/// Affine projection followed by length normalization: `Norm(P·x + mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontEnd {
    pub proj: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl FrontEnd {
    pub fn new(proj: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if proj.nrows() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: proj.nrows(),
                got: offset.len(),
            });
        }
        if proj.nrows() == 0 || proj.nrows() > proj.ncols() {
            return Err(Error::InvalidData(format!(
                "front-end output dim {} must be in 1..={}",
                proj.nrows(),
                proj.ncols()
            )));
        }
        if proj.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite front-end parameter".into()));
        }
        Ok(FrontEnd { proj, offset })
    }

    pub fn in_dim(&self) -> usize {
        self.proj.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.proj.nrows()
    }

    /// `P·x + mu`, before length normalization.
    pub fn affine(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(&self.proj * DVector::from_column_slice(x) + &self.offset)
    }

    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(length_normalize(&self.affine(x)?)?.0)
    }

    /// Applies the front-end to every row; returns normalized rows and the
    /// norms they were divided by.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        let mut v = x * self.proj.transpose();
        let mut norms = Vec::with_capacity(v.nrows());
        for (i, mut row) in v.row_iter_mut().enumerate() {
            row += self.offset.transpose();
            let n = row.norm();
            if !(n > 1e-30) {
                return Err(Error::InvalidData(format!(
                    "row {i}: {}",
                    Error::ZeroNorm(n)
                )));
            }
            row /= n;
            norms.push(n);
        }
        Ok((v, norms))
    }
}

/// Free function form of [`FrontEnd::apply`].
pub fn apply_front(x: &[f64], fe: &FrontEnd) -> Result<DVector<f64>> {
    fe.apply(x)
}

/// The complete scaled LDA basis, one direction per row in descending order of
/// discriminability, with the centering offset for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaBasis {
    pub rows: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub eigenvalues: DVector<f64>,
}

impl LdaBasis {
    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    /// Front-end built from the first `n` directions.
    pub fn first(&self, n: usize) -> Result<FrontEnd> {
        self.slice(0, n)
    }

    /// Front-end built from the last `n` directions.
    pub fn last(&self, n: usize) -> Result<FrontEnd> {
        if n > self.dim() {
            return Err(Error::InsufficientData(format!(
                "requested the last {n} of {} LDA directions",
                self.dim()
            )));
        }
        self.slice(self.dim() - n, n)
    }

    fn slice(&self, start: usize, n: usize) -> Result<FrontEnd> {
        if n == 0 || start + n > self.dim() {
            return Err(Error::InsufficientData(format!(
                "LDA rows {start}..{} out of range (basis has {})",
                start + n,
                self.dim()
            )));
        }
        FrontEnd::new(
            self.rows.rows(start, n).into_owned(),
            self.offset.rows(start, n).into_owned(),
        )
    }
}

/// Fits LDA on rows of `x` with per-row class labels and returns the
/// front-end for the first `out_dim` directions together with the full basis.
///
/// Scatter matrices are per-sample weighted; classes with a single sample do
/// not contribute to the scatter estimates. Every direction is scaled to unit
/// population variance over all rows and the offset centres the projections.
pub fn fit_lda(x: &DMatrix<f64>, labels: &[&str], out_dim: usize) -> Result<(FrontEnd, LdaBasis)> {
    let (n, dim) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if out_dim == 0 || out_dim > dim {
        return Err(Error::InvalidData(format!(
            "LDA output dim {out_dim} must be in 1..={dim}"
        )));
    }
    let (class_of, n_classes) = class_indices(labels.iter().copied());
    let mut counts = vec![0usize; n_classes];
    for &c in &class_of {
        counts[c] += 1;
    }
    let retained: Vec<usize> = (0..n).filter(|&i| counts[class_of[i]] >= 2).collect();
    let n_retained_classes = counts.iter().filter(|&&c| c >= 2).count();
    if n_retained_classes < 2 {
        return Err(Error::InsufficientData(format!(
            "LDA needs at least 2 classes with 2+ samples, found {n_retained_classes}"
        )));
    }

    let mut class_sums = DMatrix::<f64>::zeros(n_classes, dim);
    for &i in &retained {
        let mut r = class_sums.row_mut(class_of[i]);
        r += x.row(i);
    }
    let nr = retained.len() as f64;
    let mean_r = class_sums.row_sum() / nr;
    let mut sw = DMatrix::<f64>::zeros(dim, dim);
    let mut sb = DMatrix::<f64>::zeros(dim, dim);
    for c in 0..n_classes {
        if counts[c] < 2 {
            continue;
        }
        let m_c = class_sums.row(c) / counts[c] as f64;
        let d = (&m_c - &mean_r).transpose();
        sb += &d * d.transpose() * counts[c] as f64;
    }
    for &i in &retained {
        let c = class_of[i];
        let d = (x.row(i) - class_sums.row(c) / counts[c] as f64).transpose();
        sw += &d * d.transpose();
    }
    sw /= nr;
    sb /= nr;

    let trace = sw.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Singular("within-class scatter is zero".into()));
    }
    for i in 0..dim {
        sw[(i, i)] += WITHIN_RIDGE * trace / dim as f64;
    }
    let chol = cholesky(&sw, "within-class scatter")?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("within-class scatter".into()))?;
    let whitened_between = &l_inv * &sb * l_inv.transpose();
    let (eigenvalues, u) = sym_eigen_desc(&whitened_between);
    // Columns are the generalized eigenvectors of (Sb, Sw).
    let directions = l_inv.transpose() * u;

    let mean_all = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean_all[j]);
    let proj = &centered * &directions;
    let mut rows = directions.transpose();
    for k in 0..dim {
        let var = proj.column(k).norm_squared() / n as f64;
        if !(var > 1e-300) {
            return Err(Error::Singular(format!(
                "LDA direction {k} has zero variance over the data"
            )));
        }
        let mut r = rows.row_mut(k);
        r /= var.sqrt();
    }
    let offset = -(&rows * mean_all.transpose());
    let basis = LdaBasis {
        rows,
        offset,
        eigenvalues,
    };
    Ok((basis.first(out_dim)?, basis))
}
