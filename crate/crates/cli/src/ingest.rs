//! CSV ingestion: map named header columns onto the dataset roles.
//!
//! Rules: a header row is required; decimal point `.` and scientific
//! notation are accepted; rows with missing values (empty, `NA`, `NaN`,
//! `null`) in any role column are dropped and counted; any unparseable or
//! non-finite value is a data error reported with its row and column.

use std::collections::HashSet;
use std::path::Path;

use cfiv_core::Dataset;
use nalgebra::{DMatrix, DVector};

use crate::CliError;

/// Label used when an intercept has to be synthesized.
const INTERCEPT_LABEL: &str = "_intercept";
/// Placeholder instrument label for estimators that use none.
const NO_INSTRUMENT_LABEL: &str = "_no_instrument";

pub struct Ingested {
    pub data: Dataset,
    pub rows_dropped: usize,
}

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "n/a"
    )
}

/// Reads `path` and assembles a dataset from the named role columns. When
/// `z_cols` is empty (OLS), a placeholder instrument column of zeros keeps
/// the dataset shape valid; no estimator reads it. An intercept column is
/// appended unless one of the `x_cols` is already constant.
pub fn read_dataset(
    path: &Path,
    y_col: &str,
    d_col: &str,
    x_cols: &[String],
    z_cols: &[String],
) -> Result<Ingested, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: bad header row: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let mut seen = HashSet::new();
    let mut resolve = |role: &str, name: &str| -> Result<usize, CliError> {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!(
                "{role} column `{name}` not found in CSV header (available: {})",
                headers.join(", ")
            ))
        })?;
        if !seen.insert(idx) {
            return Err(CliError::Config(format!(
                "column `{name}` assigned to more than one role"
            )));
        }
        Ok(idx)
    };

    let y_idx = resolve("outcome", y_col)?;
    let d_idx = resolve("endogenous", d_col)?;
    let x_idx: Vec<usize> = x_cols
        .iter()
        .map(|c| resolve("exogenous", c))
        .collect::<Result<_, _>>()?;
    let z_idx: Vec<usize> = z_cols
        .iter()
        .map(|c| resolve("instrument", c))
        .collect::<Result<_, _>>()?;

    let role_indices: Vec<usize> = [y_idx, d_idx]
        .into_iter()
        .chain(x_idx.iter().copied())
        .chain(z_idx.iter().copied())
        .collect();

    // Parsed role values, one inner vec per kept row.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rows_dropped = 0usize;
    for (row_number, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            CliError::Data(format!(
                "{}: data row {}: {e}",
                path.display(),
                row_number + 1
            ))
        })?;
        let mut parsed = Vec::with_capacity(role_indices.len());
        let mut missing = false;
        for &idx in &role_indices {
            let field = record.get(idx).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: data row {} has no column {} (`{}`)",
                    path.display(),
                    row_number + 1,
                    idx + 1,
                    headers[idx]
                ))
            })?;
            if is_missing(field) {
                missing = true;
                break;
            }
            let value: f64 = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: data row {}, column `{}`: cannot parse `{field}` as a number",
                    path.display(),
                    row_number + 1,
                    headers[idx]
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: data row {}, column `{}`: non-finite value `{field}`",
                    path.display(),
                    row_number + 1,
                    headers[idx]
                )));
            }
            parsed.push(value);
        }
        if missing {
            rows_dropped += 1;
        } else {
            rows.push(parsed);
        }
    }

    let n = rows.len();
    if n == 0 {
        return Err(CliError::Data(format!(
            "{}: no usable rows after dropping {rows_dropped} with missing values",
            path.display()
        )));
    }

    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let d = DVector::from_fn(n, |i, _| rows[i][1]);
    let p_x = x_idx.len();
    let p_z = z_idx.len();
    let x_user = DMatrix::from_fn(n, p_x, |i, j| rows[i][2 + j]);
    let z_user = DMatrix::from_fn(n, p_z, |i, j| rows[i][2 + p_x + j]);

    // Append an intercept unless the user already supplied a constant column.
    let has_constant = (0..p_x).any(|j| {
        let first = x_user[(0, j)];
        first != 0.0
            && (0..n).all(|i| (x_user[(i, j)] - first).abs() <= 1e-12 * first.abs().max(1.0))
    });
    let (x, x_labels) = if has_constant {
        (x_user, x_cols.to_vec())
    } else {
        let mut labels = x_cols.to_vec();
        labels.push(INTERCEPT_LABEL.to_string());
        let mut x = DMatrix::from_element(n, p_x + 1, 1.0);
        x.view_mut((0, 0), (n, p_x)).copy_from(&x_user);
        (x, labels)
    };

    let (z, z_labels) = if p_z == 0 {
        (DMatrix::zeros(n, 1), vec![NO_INSTRUMENT_LABEL.to_string()])
    } else {
        (z_user, z_cols.to_vec())
    };

    let data = Dataset::new(y, d, x, x_labels, z, z_labels)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Ingested { data, rows_dropped })
}
