//! The augmented control-function estimator.
//!
//! Step one regresses the endogenous regressor `D` on `(Z, X)`, fits a
//! variance model to the squared residuals, and forms the normalized control
//! function `v_hat = v_raw / h`. Step two runs OLS of `Y` on the augmented
//! design `R = [D | X | control-function terms]`, where each term is a
//! monomial `D^s * v_hat^j`. Because `v_hat` is built from estimated
//! first-stage parameters `phi = (pi1, pi2, gamma)`, the second-stage
//! variance requires the Jacobian of `R` in `phi`; that correction lives in
//! the inference module and is wired in by [`fit_cf`].

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{hc0_sandwich, phi_inference, sandwich_variance};
use crate::linalg::{ols_solve, DesignMatrix};
use crate::skedastic::{
    fit_skedastic, floored_scales, SkedasticFamily, SkedasticFit, SkedasticSpec,
    VARIANCE_FLOOR_RATIO,
};

/// One control-function regressor: the monomial `D^d_power * v_hat^v_power`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CfTerm {
    pub d_power: usize,
    /// Power on the control function; must be at least 1 (a zeroth power
    /// would duplicate the intercept).
    pub v_power: usize,
}

impl CfTerm {
    pub fn new(d_power: usize, v_power: usize) -> Result<Self> {
        if v_power == 0 {
            return Err(Error::InvalidConfig(
                "control-function terms need v_power >= 1".into(),
            ));
        }
        Ok(Self { d_power, v_power })
    }

    /// Canonical token, also used as the regressor column label: `v`, `vd`,
    /// `v2`, `v2d`, `vd2`, ... (`v<j>` then optionally `d<s>`).
    pub fn token(&self) -> String {
        let mut out = String::from("v");
        if self.v_power > 1 {
            out.push_str(&self.v_power.to_string());
        }
        if self.d_power >= 1 {
            out.push('d');
            if self.d_power > 1 {
                out.push_str(&self.d_power.to_string());
            }
        }
        out
    }

    /// Parses one token of the `token()` grammar.
    fn parse(token: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidConfig(format!(
                "unrecognized control-function term `{token}` \
                 (expected v, v2, vd, v2d, vd2, ...)"
            ))
        };
        let rest = token.strip_prefix('v').ok_or_else(bad)?;
        let d_pos = rest.find('d');
        let (v_digits, d_part) = match d_pos {
            Some(p) => (&rest[..p], Some(&rest[p + 1..])),
            None => (rest, None),
        };
        let v_power = if v_digits.is_empty() {
            1
        } else {
            v_digits.parse::<usize>().map_err(|_| bad())?
        };
        let d_power = match d_part {
            None => 0,
            Some("") => 1,
            Some(digits) => digits.parse::<usize>().map_err(|_| bad())?,
        };
        if v_power == 0 {
            return Err(bad());
        }
        Ok(Self { d_power, v_power })
    }
}

/// A control-function model: the ordered term set plus the variance-model
/// family used to normalize the first-stage residuals.
#[derive(Debug, Clone)]
pub struct CfModel {
    terms: Vec<CfTerm>,
    pub skedastic: SkedasticSpec,
}

impl CfModel {
    /// Builds a model, rejecting duplicate terms. An empty term set is legal
    /// and reduces the fit to OLS of `Y` on `(D, X)`.
    pub fn new(terms: Vec<CfTerm>, skedastic: SkedasticSpec) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::DuplicateColumn { label: t.token() });
            }
        }
        Ok(Self { terms, skedastic })
    }

    /// Parses a preset name (`cf1`, `cf2`) or a `+`/`,`-separated term list
    /// such as `v+vd+v2`.
    pub fn parse(spec: &str, skedastic: SkedasticSpec) -> Result<Self> {
        let spec = spec.trim().to_ascii_lowercase();
        let list = match spec.as_str() {
            "cf1" => "v+vd".to_string(),
            "cf2" => "v+vd+vd2".to_string(),
            other => other.to_string(),
        };
        let mut terms = Vec::new();
        for token in list.split(['+', ',']) {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            terms.push(CfTerm::parse(token)?);
        }
        if terms.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "empty control-function term list `{spec}`"
            )));
        }
        Self::new(terms, skedastic)
    }

    /// The control function alone: terms `{v}`.
    pub fn single_v(skedastic: SkedasticSpec) -> Self {
        Self::new(
            vec![CfTerm {
                d_power: 0,
                v_power: 1,
            }],
            skedastic,
        )
        .expect("static term set is valid")
    }

    /// Preset `cf1`: terms `{v, vd}`.
    pub fn cf1(skedastic: SkedasticSpec) -> Self {
        Self::parse("cf1", skedastic).expect("static term set is valid")
    }

    /// Preset `cf2`: terms `{v, vd, vd2}`.
    pub fn cf2(skedastic: SkedasticSpec) -> Self {
        Self::parse("cf2", skedastic).expect("static term set is valid")
    }

    pub fn terms(&self) -> &[CfTerm] {
        &self.terms
    }

    /// `+`-joined canonical form of the term list.
    pub fn term_spec(&self) -> String {
        self.terms
            .iter()
            .map(CfTerm::token)
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Stacked first-stage parameters `phi = (pi1, pi2, gamma)`.
#[derive(Debug, Clone)]
pub struct Phi {
    pub pi1: DVector<f64>,
    pub pi2: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl Phi {
    pub fn from_first_stage(fs: &FirstStageFit) -> Self {
        Self {
            pi1: fs.pi1.clone(),
            pi2: fs.pi2.clone(),
            gamma: fs.skedastic.gamma.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.pi1.len() + self.pi2.len() + self.gamma.len()
    }

    /// Flattens to a vector ordered `(pi1, pi2, gamma)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        let mut k = 0;
        for block in [&self.pi1, &self.pi2, &self.gamma] {
            for v in block.iter() {
                out[k] = *v;
                k += 1;
            }
        }
        out
    }

    /// Inverse of [`Phi::to_vector`] for the given block sizes.
    pub fn from_vector(v: &DVector<f64>, p_z: usize, p_x: usize, p_gamma: usize) -> Result<Self> {
        if v.len() != p_z + p_x + p_gamma {
            return Err(Error::DimensionMismatch {
                context: "phi vector length",
                expected: p_z + p_x + p_gamma,
                actual: v.len(),
            });
        }
        Ok(Self {
            pi1: DVector::from_iterator(p_z, v.iter().take(p_z).cloned()),
            pi2: DVector::from_iterator(p_x, v.iter().skip(p_z).take(p_x).cloned()),
            gamma: DVector::from_iterator(p_gamma, v.iter().skip(p_z + p_x).cloned()),
        })
    }
}

/// First-stage output: projection coefficients, the fitted variance model,
/// and raw/normalized residuals.
#[derive(Debug, Clone)]
pub struct FirstStageFit {
    /// Coefficients on the instruments.
    pub pi1: DVector<f64>,
    /// Coefficients on the exogenous block.
    pub pi2: DVector<f64>,
    /// Fitted variance model for the residual scale.
    pub skedastic: SkedasticFit,
    /// Raw residuals `D - Z pi1 - X pi2`.
    pub v_raw: DVector<f64>,
    /// Normalized control function `v_raw / h`.
    pub v_hat: DVector<f64>,
    /// Condition number of the `[Z | X]` design.
    pub condition_number: f64,
}

/// Regresses `D` on `[Z | X]` and fits the variance model to the squared
/// residuals. With the `Unit` family, `v_hat` equals `v_raw` exactly.
pub fn fit_first_stage(data: &Dataset, spec: &SkedasticSpec) -> Result<FirstStageFit> {
    let zx = data.zx_design();
    let proj = ols_solve(&zx, data.d())?;
    let p_z = data.p_z();
    let p_x = data.p_x();
    let pi1 = DVector::from_iterator(p_z, proj.coefficients.iter().take(p_z).cloned());
    let pi2 = DVector::from_iterator(p_x, proj.coefficients.iter().skip(p_z).cloned());
    let v_raw = proj.residuals;
    let squared = v_raw.map(|v| v * v);
    let skedastic = fit_skedastic(spec, &squared, data)?;
    let v_hat = DVector::from_fn(data.n(), |i, _| v_raw[i] / skedastic.h_values[i]);
    Ok(FirstStageFit {
        pi1,
        pi2,
        skedastic,
        v_raw,
        v_hat,
        condition_number: proj.condition_number,
    })
}

fn regressor_labels(model: &CfModel, data: &Dataset) -> Vec<String> {
    std::iter::once("d".to_string())
        .chain(data.x_labels().iter().cloned())
        .chain(model.terms.iter().map(CfTerm::token))
        .collect()
}

fn assemble_regressors(
    model: &CfModel,
    data: &Dataset,
    v_hat: &DVector<f64>,
) -> Result<DesignMatrix> {
    let n = data.n();
    let p_x = data.p_x();
    let k = 1 + p_x + model.terms.len();
    let values = DMatrix::from_fn(n, k, |i, j| {
        if j == 0 {
            data.d()[i]
        } else if j - 1 < p_x {
            data.x()[(i, j - 1)]
        } else {
            let term = &model.terms[j - 1 - p_x];
            data.d()[i].powi(term.d_power as i32) * v_hat[i].powi(term.v_power as i32)
        }
    });
    DesignMatrix::new(values, regressor_labels(model, data))
}

/// Second-stage design `R = [D | X | terms]` at the fitted first stage.
pub fn build_regressors(
    model: &CfModel,
    data: &Dataset,
    first_stage: &FirstStageFit,
) -> Result<DesignMatrix> {
    if first_stage.v_hat.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "first-stage length",
            expected: data.n(),
            actual: first_stage.v_hat.len(),
        });
    }
    assemble_regressors(model, data, &first_stage.v_hat)
}

/// Second-stage design evaluated at an arbitrary parameter point `phi`,
/// recomputing residuals and scales from scratch. This is the map the
/// Jacobian differentiates; finite-difference checks perturb `phi` here.
pub fn build_regressors_at(model: &CfModel, data: &Dataset, phi: &Phi) -> Result<DesignMatrix> {
    let n = data.n();
    if phi.pi1.len() != data.p_z() || phi.pi2.len() != data.p_x() {
        return Err(Error::DimensionMismatch {
            context: "phi block sizes",
            expected: data.p_z() + data.p_x(),
            actual: phi.pi1.len() + phi.pi2.len(),
        });
    }
    let v_raw = data.d() - data.z() * &phi.pi1 - data.x() * &phi.pi2;
    let h = match model.skedastic.family {
        SkedasticFamily::Unit => DVector::from_element(n, 1.0),
        family => {
            let features = model.skedastic.features(data);
            if phi.gamma.len() != features.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "gamma length",
                    expected: features.ncols(),
                    actual: phi.gamma.len(),
                });
            }
            let linear = &features * &phi.gamma;
            let h2_raw = match family {
                SkedasticFamily::LinearPower => linear,
                SkedasticFamily::LogLinear => linear.map(f64::exp),
                SkedasticFamily::Unit => unreachable!("handled above"),
            };
            let mean_v2 = v_raw.map(|v| v * v).mean();
            let floor = VARIANCE_FLOOR_RATIO * mean_v2;
            floored_scales(&h2_raw, floor).0
        }
    };
    let v_hat = DVector::from_fn(n, |i, _| v_raw[i] / h[i]);
    assemble_regressors(model, data, &v_hat)
}

/// Per-observation Jacobians `J_i = dR_i / dphi` (each `dim(R) × dim(phi)`)
/// at the fitted first stage.
///
/// Rows for `D` and `X` are zero. For a term `D^s v^j` the row is
/// `j D^s v^(j-1) * dv/dphi` with `dv/dpi1 = -z/h`, `dv/dpi2 = -x/h`, and
/// `dv/dgamma = -v grad_h / h`.
pub fn regressor_jacobian(
    model: &CfModel,
    data: &Dataset,
    first_stage: &FirstStageFit,
) -> Result<Vec<DMatrix<f64>>> {
    let n = data.n();
    let p_z = data.p_z();
    let p_x = data.p_x();
    let p_gamma = first_stage.skedastic.gamma.len();
    let d_phi = p_z + p_x + p_gamma;
    let k = 1 + p_x + model.terms.len();
    if first_stage.skedastic.grad_h.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "gradient rows",
            expected: n,
            actual: first_stage.skedastic.grad_h.nrows(),
        });
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let h = first_stage.skedastic.h_values[i];
        let v = first_stage.v_hat[i];
        let mut dv = DVector::zeros(d_phi);
        for j in 0..p_z {
            dv[j] = -data.z()[(i, j)] / h;
        }
        for j in 0..p_x {
            dv[p_z + j] = -data.x()[(i, j)] / h;
        }
        for j in 0..p_gamma {
            dv[p_z + p_x + j] = -v * first_stage.skedastic.grad_h[(i, j)] / h;
        }

        let mut jac = DMatrix::zeros(k, d_phi);
        for (t, term) in model.terms.iter().enumerate() {
            let row = 1 + p_x + t;
            let coef = term.v_power as f64
                * data.d()[i].powi(term.d_power as i32)
                * v.powi(term.v_power as i32 - 1);
            for c in 0..d_phi {
                jac[(row, c)] = coef * dv[c];
            }
        }
        out.push(jac);
    }
    Ok(out)
}

/// A fitted control-function model.
#[derive(Debug, Clone)]
pub struct CfFit {
    /// Coefficient on the endogenous regressor `D`.
    pub alpha1: f64,
    /// Coefficients on the `X` block and the control-function terms, in
    /// design order.
    pub alpha_w: DVector<f64>,
    /// The second-stage design `R` the coefficients were fitted on.
    pub regressors: DesignMatrix,
    /// Second-stage residuals.
    pub u_hat: DVector<f64>,
    pub first_stage: FirstStageFit,
    /// Two-step sandwich covariance of `sqrt(n) (alpha_hat - alpha)`,
    /// including the generated-regressor correction.
    pub omega: DMatrix<f64>,
    /// Plain HC0 sandwich that ignores the first-stage estimation error;
    /// kept for comparison (it understates the variance).
    pub omega_naive: DMatrix<f64>,
    /// Condition number of the second-stage design.
    pub condition_number: f64,
    /// Sample size.
    pub n: usize,
}

impl CfFit {
    /// Full coefficient vector `(alpha1, alpha_w)` in design order.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut out = DVector::zeros(1 + self.alpha_w.len());
        out[0] = self.alpha1;
        for (i, v) in self.alpha_w.iter().enumerate() {
            out[i + 1] = *v;
        }
        out
    }

    /// Corrected standard error of the coefficient on `D`.
    pub fn se_alpha1(&self) -> f64 {
        (self.omega[(0, 0)] / self.n as f64).sqrt()
    }

    /// Uncorrected (HC0) standard error of the coefficient on `D`.
    pub fn se_alpha1_naive(&self) -> f64 {
        (self.omega_naive[(0, 0)] / self.n as f64).sqrt()
    }
}

/// Runs the full two-step estimator and assembles both variance estimates.
pub fn fit_cf(data: &Dataset, model: &CfModel) -> Result<CfFit> {
    let first_stage = fit_first_stage(data, &model.skedastic)?;
    let regressors = build_regressors(model, data, &first_stage)?;
    let proj = ols_solve(&regressors, data.y())?;
    let u_hat = proj.residuals;

    let phi_inf = phi_inference(&first_stage, data)?;
    let jacobians = regressor_jacobian(model, data, &first_stage)?;
    let sandwich = sandwich_variance(
        &regressors,
        &proj.coefficients,
        &u_hat,
        &phi_inf,
        &jacobians,
    )?;
    let omega_naive = hc0_sandwich(regressors.values(), &u_hat)?;

    Ok(CfFit {
        alpha1: proj.coefficients[0],
        alpha_w: DVector::from_iterator(
            proj.coefficients.len() - 1,
            proj.coefficients.iter().skip(1).cloned(),
        ),
        regressors,
        u_hat,
        first_stage,
        omega: sandwich.omega,
        omega_naive,
        condition_number: proj.condition_number,
        n: data.n(),
    })
}

/// Point estimates only (no variance work); used by the bootstrap where each
/// replicate needs just the coefficient vector.
pub(crate) fn fit_cf_point(data: &Dataset, model: &CfModel) -> Result<DVector<f64>> {
    let first_stage = fit_first_stage(data, &model.skedastic)?;
    let regressors = build_regressors(model, data, &first_stage)?;
    Ok(ols_solve(&regressors, data.y())?.coefficients)
}
