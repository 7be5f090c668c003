//! Observation container for the structural model: response `Y`, scalar
//! endogenous regressor `D`, exogenous block `X` (which must carry an
//! intercept column), and instrument block `Z`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;

/// Relative spread below which a column counts as constant.
const CONSTANT_COLUMN_TOLERANCE: f64 = 1e-12;

/// A validated estimation sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    d: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    x_labels: Vec<String>,
    z_labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking row-count agreement, finiteness, label
    /// uniqueness across blocks, and the presence of an intercept in `X`.
    pub fn new(
        y: DVector<f64>,
        d: DVector<f64>,
        x: DMatrix<f64>,
        x_labels: Vec<String>,
        z: DMatrix<f64>,
        z_labels: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: 1,
                actual: 0,
            });
        }
        for (len, context) in [
            (d.len(), "d length"),
            (x.nrows(), "x rows"),
            (z.nrows(), "z rows"),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        if x.ncols() != x_labels.len() {
            return Err(Error::DimensionMismatch {
                context: "x labels",
                expected: x.ncols(),
                actual: x_labels.len(),
            });
        }
        if z.ncols() != z_labels.len() {
            return Err(Error::DimensionMismatch {
                context: "z labels",
                expected: z.ncols(),
                actual: z_labels.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "x block must have at least one column (the intercept)".into(),
            ));
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "z block must have at least one instrument column".into(),
            ));
        }

        for (vec, context) in [(&y, "y"), (&d, "d")] {
            if vec.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput {
                    context: context.to_string(),
                });
            }
        }
        for (mat, labels) in [(&x, &x_labels), (&z, &z_labels)] {
            for (column, label) in mat.column_iter().zip(labels.iter()) {
                if column.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput {
                        context: format!("column `{label}`"),
                    });
                }
            }
        }

        let mut seen: Vec<&String> = Vec::new();
        for label in x_labels.iter().chain(z_labels.iter()) {
            if label == "y" || label == "d" {
                return Err(Error::DuplicateColumn {
                    label: label.clone(),
                });
            }
            if seen.contains(&label) {
                return Err(Error::DuplicateColumn {
                    label: label.clone(),
                });
            }
            seen.push(label);
        }

        let ds = Self {
            y,
            d,
            x,
            z,
            x_labels,
            z_labels,
        };
        if !(0..ds.x.ncols()).any(|j| ds.is_constant_column(j) && ds.x[(0, j)] != 0.0) {
            return Err(Error::InvalidConfig(
                "x block must include a nonzero constant (intercept) column".into(),
            ));
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn p_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn z_labels(&self) -> &[String] {
        &self.z_labels
    }

    fn is_constant_column(&self, j: usize) -> bool {
        let col = self.x.column(j);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min).abs() <= CONSTANT_COLUMN_TOLERANCE * (1.0 + max.abs())
    }

    /// Indices of `X` columns that vary across rows; these feed the variance
    /// model features (a constant there would duplicate its intercept).
    pub fn x_nonconstant_columns(&self) -> Vec<usize> {
        (0..self.x.ncols())
            .filter(|&j| !self.is_constant_column(j))
            .collect()
    }

    /// First-stage design `[Z | X]` (instruments first, matching the
    /// parameter ordering used by the inference module).
    pub fn zx_design(&self) -> DesignMatrix {
        let n = self.n();
        let k = self.p_z() + self.p_x();
        let values = DMatrix::from_fn(n, k, |i, j| {
            if j < self.p_z() {
                self.z[(i, j)]
            } else {
                self.x[(i, j - self.p_z())]
            }
        });
        let labels = self
            .z_labels
            .iter()
            .chain(self.x_labels.iter())
            .cloned()
            .collect();
        DesignMatrix::new(values, labels).expect("validated blocks stay valid when stacked")
    }

    /// Baseline regression design `[D | X]`.
    pub fn dx_design(&self) -> DesignMatrix {
        let n = self.n();
        let k = 1 + self.p_x();
        let values = DMatrix::from_fn(n, k, |i, j| {
            if j == 0 {
                self.d[i]
            } else {
                self.x[(i, j - 1)]
            }
        });
        let labels = std::iter::once("d".to_string())
            .chain(self.x_labels.iter().cloned())
            .collect();
        DesignMatrix::new(values, labels).expect("validated blocks stay valid when stacked")
    }

    /// X block as a design matrix (controls for residualization).
    pub fn x_design(&self) -> DesignMatrix {
        DesignMatrix::new(self.x.clone(), self.x_labels.clone())
            .expect("validated block stays valid")
    }

    /// Z block as a design matrix.
    pub fn z_design(&self) -> DesignMatrix {
        DesignMatrix::new(self.z.clone(), self.z_labels.clone())
            .expect("validated block stays valid")
    }

    /// Pairs-resampled copy: row `i` of the result is row `idx[i]` of `self`.
    pub fn resample(&self, idx: &[usize]) -> Result<Dataset> {
        let n = self.n();
        if idx.is_empty() {
            return Err(Error::InvalidConfig("resample index set is empty".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidConfig(format!(
                "resample index {bad} out of range for {n} rows"
            )));
        }
        let m = idx.len();
        let y = DVector::from_fn(m, |i, _| self.y[idx[i]]);
        let d = DVector::from_fn(m, |i, _| self.d[idx[i]]);
        let x = DMatrix::from_fn(m, self.p_x(), |i, j| self.x[(idx[i], j)]);
        let z = DMatrix::from_fn(m, self.p_z(), |i, j| self.z[(idx[i], j)]);
        // Field-wise clone keeps labels; validation invariants are preserved
        // by row selection (the intercept column stays constant).
        Ok(Dataset {
            y,
            d,
            x,
            z,
            x_labels: self.x_labels.clone(),
            z_labels: self.z_labels.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dataset() -> Dataset {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let d = DVector::from_vec(vec![0.5, 1.5, 2.0, 0.0]);
        let x = DMatrix::from_element(4, 1, 1.0);
        let z = DMatrix::from_vec(4, 1, vec![0.1, 0.9, 0.4, 0.7]);
        Dataset::new(y, d, x, vec!["const".into()], z, vec!["z".into()]).unwrap()
    }

    #[test]
    fn valid_dataset_reports_shapes() {
        let ds = small_dataset();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.p_x(), 1);
        assert_eq!(ds.p_z(), 1);
        assert_eq!(ds.zx_design().labels(), ["z", "const"]);
        assert_eq!(ds.dx_design().labels(), ["d", "const"]);
    }

    #[test]
    fn missing_intercept_is_rejected() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let d = DVector::from_vec(vec![0.5, 1.5, 2.0]);
        let x = DMatrix::from_vec(3, 1, vec![0.3, 0.7, 0.9]);
        let z = DMatrix::from_vec(3, 1, vec![0.1, 0.9, 0.4]);
        assert!(matches!(
            Dataset::new(y, d, x, vec!["x1".into()], z, vec!["z".into()]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let y = DVector::from_vec(vec![1.0, f64::NAN, 3.0]);
        let d = DVector::from_vec(vec![0.5, 1.5, 2.0]);
        let x = DMatrix::from_element(3, 1, 1.0);
        let z = DMatrix::from_vec(3, 1, vec![0.1, 0.9, 0.4]);
        assert!(matches!(
            Dataset::new(y, d, x, vec!["const".into()], z, vec!["z".into()]),
            Err(Error::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn clashing_labels_across_blocks_are_rejected() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let d = DVector::from_vec(vec![0.5, 1.5, 2.0]);
        let x = DMatrix::from_element(3, 1, 1.0);
        let z = DMatrix::from_vec(3, 1, vec![0.1, 0.9, 0.4]);
        assert!(matches!(
            Dataset::new(y, d, x, vec!["w".into()], z, vec!["w".into()]),
            Err(Error::DuplicateColumn { .. })
        ));
    }

    #[test]
    fn nonconstant_column_detection() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let d = DVector::from_vec(vec![0.5, 1.5, 2.0]);
        let x = DMatrix::from_vec(3, 2, vec![1.0, 1.0, 1.0, 0.2, 0.5, 0.9]);
        let z = DMatrix::from_vec(3, 1, vec![0.1, 0.9, 0.4]);
        let ds = Dataset::new(
            y,
            d,
            x,
            vec!["const".into(), "x1".into()],
            z,
            vec!["z".into()],
        )
        .unwrap();
        assert_eq!(ds.x_nonconstant_columns(), vec![1]);
    }

    #[test]
    fn resample_identity_reproduces_rows() {
        let ds = small_dataset();
        let idx: Vec<usize> = (0..ds.n()).collect();
        let rs = ds.resample(&idx).unwrap();
        assert_eq!(rs.y(), ds.y());
        assert_eq!(rs.d(), ds.d());
        assert_eq!(rs.z(), ds.z());
    }

    #[test]
    fn resample_out_of_range_is_rejected() {
        let ds = small_dataset();
        assert!(matches!(ds.resample(&[0, 9]), Err(Error::InvalidConfig(_))));
    }
}
