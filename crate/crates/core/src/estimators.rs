//! Baseline estimators for the structural equation: OLS of `Y` on `(D, X)`
//! and two-stage least squares with instruments `Z`, both with
//! heteroskedasticity-robust (HC0) sandwich variances.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::hc0_sandwich;
use crate::linalg::{ols_solve, residualize_vector, solve_ls};

/// First-stage F statistics under this threshold flag the instruments as weak.
pub const WEAK_INSTRUMENT_F_THRESHOLD: f64 = 10.0;

/// A fitted linear baseline (OLS or 2SLS).
#[derive(Debug, Clone)]
pub struct LinearFit {
    /// Coefficient on the endogenous regressor `D`.
    pub alpha1: f64,
    /// Coefficients on the exogenous block `X` (intercept included).
    pub alpha2: DVector<f64>,
    /// Structural residuals `Y - D alpha1 - X alpha2`.
    pub residuals: DVector<f64>,
    /// Robust sandwich covariance of `sqrt(n) (alpha_hat - alpha)`, ordered
    /// `(alpha1, alpha2)`; divide the diagonal by `n` for squared standard
    /// errors.
    pub hc_variance: DMatrix<f64>,
    /// Condition number of the solved design.
    pub condition_number: f64,
    /// Sample size.
    pub n: usize,
    /// Homoskedastic first-stage F for the instruments (2SLS only).
    pub first_stage_f: Option<f64>,
    /// True when the first-stage F fell below
    /// [`WEAK_INSTRUMENT_F_THRESHOLD`]; diagnostic only.
    pub weak_instrument: bool,
}

impl LinearFit {
    /// Standard error of the coefficient on `D`.
    pub fn se_alpha1(&self) -> f64 {
        (self.hc_variance[(0, 0)] / self.n as f64).sqrt()
    }
}

/// OLS of `Y` on `(D, X)` with an HC0 sandwich variance.
pub fn fit_ols(data: &Dataset) -> Result<LinearFit> {
    let design = data.dx_design();
    let fit = ols_solve(&design, data.y())?;
    let hc_variance = hc0_sandwich(design.values(), &fit.residuals)?;
    Ok(LinearFit {
        alpha1: fit.coefficients[0],
        alpha2: DVector::from_iterator(data.p_x(), fit.coefficients.iter().skip(1).cloned()),
        residuals: fit.residuals,
        hc_variance,
        condition_number: fit.condition_number,
        n: data.n(),
        first_stage_f: None,
        weak_instrument: false,
    })
}

/// Two-stage least squares via residualization: partial `X` out of `Y`, `D`,
/// and `Z`, project the residualized `D` on the residualized instruments, and
/// take the instrumental-variables slope. Structural residuals use the
/// original regressors, and the variance is the usual heteroskedasticity-
/// robust IV sandwich.
pub fn fit_2sls(data: &Dataset) -> Result<LinearFit> {
    let n = data.n();
    let x_design = data.x_design();

    // First stage on the full design, for fitted values and the F diagnostic.
    let zx = data.zx_design();
    let first_stage = ols_solve(&zx, data.d())?;
    let d_hat = first_stage.fitted.clone();
    let rss_full = first_stage.residuals.norm_squared();
    let restricted = ols_solve(&x_design, data.d())?;
    let rss_restricted = restricted.residuals.norm_squared();
    let df_resid = n as f64 - (data.p_z() + data.p_x()) as f64;
    let first_stage_f = if rss_full > 0.0 && df_resid > 0.0 {
        ((rss_restricted - rss_full) / data.p_z() as f64) / (rss_full / df_resid)
    } else {
        f64::INFINITY
    };
    let weak_instrument = first_stage_f < WEAK_INSTRUMENT_F_THRESHOLD;

    // Slope on D from the residualized system.
    let d_bar = residualize_vector(data.d(), &x_design)?;
    let y_bar = residualize_vector(data.y(), &x_design)?;
    let z_bar = crate::linalg::residualize(&data.z_design(), &x_design)?;
    let d_bar_fit = solve_ls(&z_bar, &d_bar)?;
    let d_bar_hat = d_bar_fit.fitted;
    let denom = d_bar_hat.dot(&d_bar);
    if denom.abs() < 1e-300 {
        return Err(Error::RankDeficient {
            rank: 0,
            cols: 1,
            condition_number: f64::INFINITY,
        });
    }
    let alpha1 = d_bar_hat.dot(&y_bar) / denom;

    // Coefficients on X from the net-of-D regression, then residuals at the
    // original regressors.
    let net = data.y() - data.d() * alpha1;
    let x_fit = ols_solve(&x_design, &net)?;
    let alpha2 = x_fit.coefficients;
    let residuals = net - data.x() * &alpha2;

    // Robust IV sandwich with instruments (d_hat, X) for regressors (D, X).
    let k = 1 + data.p_x();
    let inst = DMatrix::from_fn(n, k, |i, j| {
        if j == 0 {
            d_hat[i]
        } else {
            data.x()[(i, j - 1)]
        }
    });
    let reg = data.dx_design();
    let a = inst.transpose() * reg.values() / n as f64;
    let a_inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularSigmaAlpha)?;
    let weighted = DMatrix::from_fn(n, k, |i, j| inst[(i, j)] * residuals[i]);
    let b = weighted.transpose() * &weighted / n as f64;
    let v = &a_inv * b * a_inv.transpose();
    let hc_variance = symmetrize(v);

    Ok(LinearFit {
        alpha1,
        alpha2,
        residuals,
        hc_variance,
        condition_number: first_stage.condition_number,
        n,
        first_stage_f: Some(first_stage_f),
        weak_instrument,
    })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::substream;

    fn synthetic_dataset(n: usize, seed: u64, endogenous: bool) -> Dataset {
        let mut rng = substream(seed, 77, 0);
        let mut y = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        let mut z = DMatrix::zeros(n, 1);
        let x = DMatrix::from_element(n, 1, 1.0);
        for i in 0..n {
            let zi: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            let di = 0.8 * zi + 0.5 + v;
            let e = if endogenous { u + v } else { u };
            z[(i, 0)] = zi;
            d[i] = di;
            y[i] = 2.0 * di + 1.0 + e;
        }
        Dataset::new(y, d, x, vec!["const".into()], z, vec!["z".into()]).unwrap()
    }

    #[test]
    fn noiseless_linear_outcome_is_recovered_exactly() {
        let n = 40;
        let mut rng = substream(3, 77, 1);
        let d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_element(n, 1, 1.0);
        let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &d * 3.0 + DVector::from_element(n, 0.5);
        let ds = Dataset::new(y, d, x, vec!["const".into()], z, vec!["z".into()]).unwrap();
        let fit = fit_ols(&ds).unwrap();
        assert_relative_eq!(fit.alpha1, 3.0, epsilon = 1e-10);
        assert_relative_eq!(fit.alpha2[0], 0.5, epsilon = 1e-10);
        assert!(fit.residuals.amax() < 1e-10);
    }

    #[test]
    fn self_instrumenting_matches_ols() {
        // With Z identical to D the projection leaves D unchanged, so the
        // 2SLS and OLS estimates must coincide.
        let base = synthetic_dataset(300, 5, true);
        let ds = Dataset::new(
            base.y().clone(),
            base.d().clone(),
            base.x().clone(),
            vec!["const".into()],
            DMatrix::from_fn(base.n(), 1, |i, _| base.d()[i]),
            vec!["z".into()],
        )
        .unwrap();
        let ols = fit_ols(&ds).unwrap();
        let tsls = fit_2sls(&ds).unwrap();
        assert_relative_eq!(ols.alpha1, tsls.alpha1, max_relative = 1e-10);
        assert_relative_eq!(ols.alpha2[0], tsls.alpha2[0], max_relative = 1e-10);
    }

    #[test]
    fn just_identified_slope_is_the_covariance_ratio() {
        let ds = synthetic_dataset(250, 9, true);
        let fit = fit_2sls(&ds).unwrap();
        let zc = ds.z().column(0);
        let z_mean = zc.mean();
        let y_mean = ds.y().mean();
        let d_mean = ds.d().mean();
        let mut cov_zy = 0.0;
        let mut cov_zd = 0.0;
        for i in 0..ds.n() {
            cov_zy += (zc[i] - z_mean) * (ds.y()[i] - y_mean);
            cov_zd += (zc[i] - z_mean) * (ds.d()[i] - d_mean);
        }
        assert_relative_eq!(fit.alpha1, cov_zy / cov_zd, max_relative = 1e-10);
    }

    #[test]
    fn tsls_removes_endogeneity_bias() {
        let ds = synthetic_dataset(20_000, 21, true);
        let ols = fit_ols(&ds).unwrap();
        let tsls = fit_2sls(&ds).unwrap();
        // OLS is pulled away from 2 by the correlated errors; 2SLS is not.
        assert!((ols.alpha1 - 2.0).abs() > 0.2);
        assert!((tsls.alpha1 - 2.0).abs() < 0.05);
        assert!(!tsls.weak_instrument);
        assert!(tsls.first_stage_f.unwrap() > 100.0);
    }

    #[test]
    fn hc_variance_is_symmetric_and_psd() {
        let ds = synthetic_dataset(400, 13, true);
        for fit in [fit_ols(&ds).unwrap(), fit_2sls(&ds).unwrap()] {
            let v = &fit.hc_variance;
            assert_eq!(v.nrows(), 2);
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(v[(i, j)], v[(j, i)], epsilon = 1e-10);
                }
            }
            let eigen = v.clone().symmetric_eigen().eigenvalues;
            assert!(eigen.iter().all(|e| *e > -1e-10));
        }
    }

    #[test]
    fn weak_instruments_are_flagged() {
        // An instrument unrelated to D leaves a tiny first-stage F.
        let n = 60;
        let mut rng = substream(31, 77, 2);
        let d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &d * 1.5 + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_element(n, 1, 1.0);
        let ds = Dataset::new(y, d, x, vec!["const".into()], z, vec!["z".into()]).unwrap();
        let fit = fit_2sls(&ds).unwrap();
        assert!(fit.first_stage_f.unwrap() < WEAK_INSTRUMENT_F_THRESHOLD);
        assert!(fit.weak_instrument);
    }
}
