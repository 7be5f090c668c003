//! Dense least-squares primitives shared by every estimator: validated design
//! matrices, OLS through a rank-revealing orthogonal decomposition, and
//! residualization (partialling out) of regressor blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `RANK_TOLERANCE` times the largest one are treated
/// as zero when deciding the numerical rank of a design matrix.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Condition numbers above this are worth surfacing to the caller as a
/// warning; fits still proceed.
pub const CONDITION_WARN_THRESHOLD: f64 = 1e8;

/// An n×k regressor block with one semantic label per column.
///
/// Construction validates shape (n ≥ k ≥ 1), finiteness of every entry, and
/// label uniqueness, so downstream code can assume a well-formed design.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Builds a design matrix, rejecting empty/ragged shapes, non-finite
    /// entries, and repeated column labels.
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let (n, k) = values.shape();
        if k == 0 || n < k {
            return Err(Error::DimensionMismatch {
                context: "design matrix shape (need n >= k >= 1)",
                expected: k.max(1),
                actual: n,
            });
        }
        if labels.len() != k {
            return Err(Error::DimensionMismatch {
                context: "design matrix labels",
                expected: k,
                actual: labels.len(),
            });
        }
        for (j, label) in labels.iter().enumerate() {
            if labels[..j].contains(label) {
                return Err(Error::DuplicateColumn {
                    label: label.clone(),
                });
            }
        }
        if let Some(j) = (0..k).find(|&j| values.column(j).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteInput {
                context: format!("design column `{}`", labels[j]),
            });
        }
        Ok(Self { values, labels })
    }

    /// Assembles a design matrix from labelled columns of equal length.
    pub fn from_columns(columns: &[(String, DVector<f64>)]) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::DimensionMismatch {
                context: "design matrix columns",
                expected: 1,
                actual: 0,
            });
        }
        let n = columns[0].1.len();
        for (label, col) in columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "design column length",
                    expected: n,
                    actual: col.len(),
                });
            }
            let _ = label;
        }
        let values = DMatrix::from_fn(n, k, |i, j| columns[j].1[i]);
        let labels = columns.iter().map(|(l, _)| l.clone()).collect();
        Self::new(values, labels)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Concatenates `self` and `other` side by side (labels must stay unique).
    pub fn hcat(&self, other: &DesignMatrix) -> Result<DesignMatrix> {
        if other.nrows() != self.nrows() {
            return Err(Error::DimensionMismatch {
                context: "hcat row counts",
                expected: self.nrows(),
                actual: other.nrows(),
            });
        }
        let n = self.nrows();
        let k = self.ncols() + other.ncols();
        let values = DMatrix::from_fn(n, k, |i, j| {
            if j < self.ncols() {
                self.values[(i, j)]
            } else {
                other.values[(i, j - self.ncols())]
            }
        });
        let labels = self
            .labels
            .iter()
            .chain(other.labels.iter())
            .cloned()
            .collect();
        DesignMatrix::new(values, labels)
    }
}

/// Output of a linear projection: coefficients, fitted values, residuals, and
/// rank/conditioning diagnostics.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rank: usize,
    pub condition_number: f64,
}

/// Least squares of `target` on the columns of `design`, computed from a
/// Householder QR factorization (never from normal equations).
///
/// Declares rank deficiency when the ratio of smallest to largest singular
/// value of the triangular factor falls below [`RANK_TOLERANCE`].
pub fn ols_solve(design: &DesignMatrix, target: &DVector<f64>) -> Result<ProjectionResult> {
    if target.len() != design.nrows() {
        return Err(Error::DimensionMismatch {
            context: "ols target length",
            expected: design.nrows(),
            actual: target.len(),
        });
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: "ols target".to_string(),
        });
    }
    solve_ls(design.values(), target)
}

/// QR-based least squares on raw matrices; shared by `ols_solve` and internal
/// fitters that build designs on the fly (inputs assumed finite).
pub(crate) fn solve_ls(values: &DMatrix<f64>, target: &DVector<f64>) -> Result<ProjectionResult> {
    let k = values.ncols();
    let qr = values.clone().qr();
    let r = qr.r();

    // Rank and conditioning from the singular values of the (small) k×k
    // triangular factor: same spectrum as the full design.
    let sv = r.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition_number = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let rank = sv.iter().filter(|s| **s > smax * RANK_TOLERANCE).count();
    if rank < k {
        return Err(Error::RankDeficient {
            rank,
            cols: k,
            condition_number,
        });
    }

    let qty = qr.q().transpose() * target;
    let coefficients = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient {
        rank,
        cols: k,
        condition_number,
    })?;
    let fitted = values * &coefficients;
    let residuals = target - &fitted;
    Ok(ProjectionResult {
        coefficients,
        fitted,
        residuals,
        rank,
        condition_number,
    })
}

/// Removes the linear projection on `controls` from every column of `block`.
///
/// Callers should include a constant column in `controls`; the result then has
/// (numerically) zero sample cross-moment with each control column.
pub fn residualize(block: &DesignMatrix, controls: &DesignMatrix) -> Result<DMatrix<f64>> {
    if block.nrows() != controls.nrows() {
        return Err(Error::DimensionMismatch {
            context: "residualize row counts",
            expected: controls.nrows(),
            actual: block.nrows(),
        });
    }
    let mut out = DMatrix::zeros(block.nrows(), block.ncols());
    for j in 0..block.ncols() {
        let target = DVector::from_column_slice(block.values().column(j).as_slice());
        let proj = solve_ls(controls.values(), &target)?;
        out.set_column(j, &proj.residuals);
    }
    Ok(out)
}

/// Vector convenience wrapper around [`residualize`].
pub fn residualize_vector(target: &DVector<f64>, controls: &DesignMatrix) -> Result<DVector<f64>> {
    if target.len() != controls.nrows() {
        return Err(Error::DimensionMismatch {
            context: "residualize target length",
            expected: controls.nrows(),
            actual: target.len(),
        });
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: "residualize target".to_string(),
        });
    }
    Ok(solve_ls(controls.values(), target)?.residuals)
}
