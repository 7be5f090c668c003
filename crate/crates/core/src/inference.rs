//! Variance estimation for the two-step control-function estimator.
//!
//! The first stage estimates `phi = (pi1, pi2, gamma)` from two sets of
//! moment conditions: the `[Z | X]` orthogonality of the projection residuals
//! and the least-squares condition of the variance model. [`phi_inference`]
//! assembles their curvature `sigma_phi` and per-observation scores `M_i`.
//!
//! The second stage is OLS on regressors containing the generated control
//! function, so its sampling variance needs more than the usual HC0 sandwich:
//! [`sandwich_variance`] adds the correction that propagates first-stage
//! estimation error through the regressor Jacobian, building per-observation
//! influence values `psi_i = R_i u_i + C sigma_phi^{-1} M_i` with
//! `C = mean(u_i J_i - R_i alpha' J_i)`.
//!
//! [`bootstrap`] offers the pairs (row-resampling) alternative: the full
//! two-step pipeline re-run per replicate with deterministic substreams.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cf::{fit_cf_point, CfModel, FirstStageFit};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::symmetrize;
use crate::linalg::{DesignMatrix, RANK_TOLERANCE};
use crate::rng::{substream, DOMAIN_BOOTSTRAP};

/// Curvature and scores of the first-stage moment conditions.
#[derive(Debug, Clone)]
pub struct PhiInference {
    /// Block-diagonal curvature: the `[Z | X]` Gram block and the variance-
    /// model block `2 * mean(grad_h grad_h' h^2)`.
    pub sigma_phi: DMatrix<f64>,
    /// Per-observation scores `M_i` (n × dim(phi)): `[z_i v_raw_i, x_i
    /// v_raw_i, grad_h_i (v_hat_i^2 - 1) h_i^3]`. Each column has mean zero
    /// at the fitted parameters up to solver precision.
    pub m_scores: DMatrix<f64>,
}

/// Builds [`PhiInference`] from a fitted first stage.
pub fn phi_inference(first_stage: &FirstStageFit, data: &Dataset) -> Result<PhiInference> {
    let n = data.n();
    let p_z = data.p_z();
    let p_x = data.p_x();
    let p_gamma = first_stage.skedastic.gamma.len();
    let d_phi = p_z + p_x + p_gamma;
    let nf = n as f64;

    let zx = data.zx_design();
    let gram = zx.values().transpose() * zx.values() / nf;

    let mut sigma_phi = DMatrix::zeros(d_phi, d_phi);
    sigma_phi
        .view_mut((0, 0), (p_z + p_x, p_z + p_x))
        .copy_from(&gram);
    if p_gamma > 0 {
        let grad = &first_stage.skedastic.grad_h;
        let h = &first_stage.skedastic.h_values;
        let weighted = DMatrix::from_fn(n, p_gamma, |i, j| grad[(i, j)] * h[i] * h[i]);
        let block = (grad.transpose() * weighted) * (2.0 / nf);
        sigma_phi
            .view_mut((p_z + p_x, p_z + p_x), (p_gamma, p_gamma))
            .copy_from(&block);
    }

    let mut m_scores = DMatrix::zeros(n, d_phi);
    for i in 0..n {
        let v_raw = first_stage.v_raw[i];
        for j in 0..p_z {
            m_scores[(i, j)] = data.z()[(i, j)] * v_raw;
        }
        for j in 0..p_x {
            m_scores[(i, p_z + j)] = data.x()[(i, j)] * v_raw;
        }
        if p_gamma > 0 {
            let h = first_stage.skedastic.h_values[i];
            let v_hat = first_stage.v_hat[i];
            let scale = (v_hat * v_hat - 1.0) * h * h * h;
            for j in 0..p_gamma {
                m_scores[(i, p_z + p_x + j)] = first_stage.skedastic.grad_h[(i, j)] * scale;
            }
        }
    }

    Ok(PhiInference {
        sigma_phi,
        m_scores,
    })
}

/// Two-step sandwich output.
#[derive(Debug, Clone)]
pub struct SandwichResult {
    /// Covariance of `sqrt(n) (alpha_hat - alpha)`:
    /// `sigma_alpha^{-1} mean(psi psi') sigma_alpha^{-1}`.
    pub omega: DMatrix<f64>,
    /// Second-stage Gram matrix `mean(R_i R_i')`.
    pub sigma_alpha: DMatrix<f64>,
    /// Per-observation influence values (n × dim(alpha)).
    pub psi: DMatrix<f64>,
    /// Generated-regressor correction `mean(u_i J_i - R_i alpha' J_i)`;
    /// zero when no regressor depends on the first stage.
    pub correction_term: DMatrix<f64>,
}

/// Inverts a symmetric PSD moment matrix, failing with `err` when its
/// smallest singular value is below `RANK_TOLERANCE` times the largest.
fn invert_moment(matrix: &DMatrix<f64>, err: Error) -> Result<DMatrix<f64>> {
    let svd = matrix.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let threshold = smax * RANK_TOLERANCE;
    if !matches!(
        smin.partial_cmp(&threshold),
        Some(std::cmp::Ordering::Greater)
    ) {
        return Err(err);
    }
    matrix.clone().lu().try_inverse().ok_or(err)
}

/// Assembles the corrected sandwich for a fitted second stage.
///
/// `jacobians` holds one `dim(R) × dim(phi)` matrix per observation (the
/// derivative of that observation's regressor row in the first-stage
/// parameters).
pub fn sandwich_variance(
    regressors: &DesignMatrix,
    alpha: &DVector<f64>,
    u_hat: &DVector<f64>,
    phi_inf: &PhiInference,
    jacobians: &[DMatrix<f64>],
) -> Result<SandwichResult> {
    let n = regressors.nrows();
    let k = regressors.ncols();
    let d_phi = phi_inf.sigma_phi.nrows();
    let nf = n as f64;
    if alpha.len() != k {
        return Err(Error::DimensionMismatch {
            context: "alpha length",
            expected: k,
            actual: alpha.len(),
        });
    }
    if u_hat.len() != n || jacobians.len() != n || phi_inf.m_scores.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "per-observation inputs",
            expected: n,
            actual: u_hat
                .len()
                .min(jacobians.len())
                .min(phi_inf.m_scores.nrows()),
        });
    }

    let r = regressors.values();
    let mut correction = DMatrix::zeros(k, d_phi);
    for i in 0..n {
        let jac = &jacobians[i];
        if jac.shape() != (k, d_phi) {
            return Err(Error::DimensionMismatch {
                context: "jacobian shape",
                expected: k * d_phi,
                actual: jac.nrows() * jac.ncols(),
            });
        }
        // u_i J_i - R_i (alpha' J_i): the first term feeds the residual
        // derivative, the second removes the fitted-value drift.
        let alpha_j = jac.transpose() * alpha; // dim(phi)
        let u_i = u_hat[i];
        for row in 0..k {
            let r_i = r[(i, row)];
            for col in 0..d_phi {
                correction[(row, col)] += u_i * jac[(row, col)] - r_i * alpha_j[col];
            }
        }
    }
    correction /= nf;

    let sigma_phi_inv = invert_moment(&phi_inf.sigma_phi, Error::SingularSigmaPhi)?;
    let amplifier = &correction * &sigma_phi_inv; // k × dim(phi)

    // psi_i = R_i u_i + amplifier M_i
    let correction_scores = &phi_inf.m_scores * amplifier.transpose(); // n × k
    let mut psi = correction_scores;
    for i in 0..n {
        let u_i = u_hat[i];
        for j in 0..k {
            psi[(i, j)] += r[(i, j)] * u_i;
        }
    }

    let sigma_alpha = r.transpose() * r / nf;
    let sigma_alpha_inv = invert_moment(&sigma_alpha, Error::SingularSigmaAlpha)?;
    let meat = psi.transpose() * &psi / nf;
    let omega = symmetrize(&sigma_alpha_inv * meat * sigma_alpha_inv.transpose());

    Ok(SandwichResult {
        omega,
        sigma_alpha,
        psi,
        correction_term: correction,
    })
}

/// Plain HC0 sandwich for OLS residuals: `Gram^{-1} mean(r r' u^2) Gram^{-1}`
/// on the `sqrt(n)` scale. This is what [`sandwich_variance`] collapses to
/// when every Jacobian is zero.
pub fn hc0_sandwich(regressors: &DMatrix<f64>, residuals: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = regressors.nrows();
    let nf = n as f64;
    if residuals.len() != n {
        return Err(Error::DimensionMismatch {
            context: "residual length",
            expected: n,
            actual: residuals.len(),
        });
    }
    let sigma = regressors.transpose() * regressors / nf;
    let sigma_inv = invert_moment(&sigma, Error::SingularSigmaAlpha)?;
    let weighted = DMatrix::from_fn(n, regressors.ncols(), |i, j| {
        regressors[(i, j)] * residuals[i]
    });
    let meat = weighted.transpose() * &weighted / nf;
    Ok(symmetrize(&sigma_inv * meat * sigma_inv.transpose()))
}

/// Pairs-bootstrap summary for a control-function fit.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Successful replicate coefficient vectors, one row per replicate, in
    /// replicate order.
    pub replicates: DMatrix<f64>,
    /// Bootstrap standard deviation per coefficient.
    pub se: DVector<f64>,
    /// Percentile 95% interval (2.5%, 97.5%) per coefficient.
    pub ci_percentile: Vec<(f64, f64)>,
    /// Replicates dropped because their two-step fit failed.
    pub failed_replicates: usize,
}

impl BootstrapResult {
    pub fn b_effective(&self) -> usize {
        self.replicates.nrows()
    }
}

/// Pairs bootstrap: resamples rows with replacement `b` times, re-runs the
/// full two-step pipeline on each resample, and summarizes the replicate
/// coefficients. Failed replicates (rank-deficient resamples) are dropped
/// and counted; more than `b / 2` failures is an error.
pub fn bootstrap(data: &Dataset, model: &CfModel, b: usize, seed: u64) -> Result<BootstrapResult> {
    let n = data.n();
    bootstrap_with_sampler(data, model, b, &|rep| {
        let mut rng = substream(seed, DOMAIN_BOOTSTRAP, rep as u64);
        (0..n)
            .map(|_| rand::Rng::random_range(&mut rng, 0..n))
            .collect()
    })
}

/// Bootstrap with a caller-supplied index sampler (`rep -> row indices`).
/// The deterministic default lives in [`bootstrap`]; tests can force, e.g.,
/// identity resamples.
pub fn bootstrap_with_sampler(
    data: &Dataset,
    model: &CfModel,
    b: usize,
    sampler: &(dyn Fn(usize) -> Vec<usize> + Sync),
) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::InvalidConfig(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }

    // Replicates are independent; collect in index order so results do not
    // depend on the worker count.
    let draws: Vec<Result<DVector<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let idx = sampler(rep);
            let resample = data.resample(&idx)?;
            fit_cf_point(&resample, model)
        })
        .collect();

    let successes: Vec<&DVector<f64>> = draws.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failed_replicates = b - successes.len();
    if failed_replicates > b / 2 {
        return Err(Error::TooManyFailures {
            failed: failed_replicates,
            total: b,
        });
    }
    let b_eff = successes.len();
    let k = successes[0].len();
    let replicates = DMatrix::from_fn(b_eff, k, |i, j| successes[i][j]);

    let mut se = DVector::zeros(k);
    let mut ci_percentile = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = (0..b_eff).map(|i| replicates[(i, j)]).collect();
        let mean = col.iter().sum::<f64>() / b_eff as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b_eff as f64 - 1.0);
        se[j] = var.sqrt();
        let mut sorted = col;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite replicate values"));
        ci_percentile.push((
            quantile_type7(&sorted, 0.025),
            quantile_type7(&sorted, 0.975),
        ));
    }

    Ok(BootstrapResult {
        replicates,
        se,
        ci_percentile,
        failed_replicates,
    })
}

/// Linear-interpolation empirical quantile (the common "type 7" convention)
/// of an ascending-sorted slice.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}
