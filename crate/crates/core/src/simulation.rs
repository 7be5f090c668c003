//! Simulated design and Monte Carlo engine.
//!
//! The data-generating process draws a folded-normal instrument `Z = |N(0,1)|`
//! and independent standard-normal errors `(U, V)`, then sets
//!
//! ```text
//! D = pi1 Z + pi2 + h(Z) V,          h(Z) = sqrt(gamma1 Z + gamma2)
//! Y = alpha1 D + alpha2 + g(D) e,    g(D) = delta1 D + delta2 D^2 + delta3
//! e = U + lambda V
//! ```
//!
//! `lambda` controls endogeneity, `gamma1` first-stage heteroskedasticity,
//! and `(delta1, delta2)` make the structural error scale depend on `D`
//! itself — the combination under which 2SLS loses consistency while the
//! normalized control function keeps it.
//!
//! The engine runs independent replications with counter-keyed substreams, so
//! a given `(seed, replication)` pair always yields the same draws no matter
//! how many workers participate.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use nalgebra::{DMatrix, DVector};

use crate::cf::{fit_cf, CfModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_2sls, fit_ols};
use crate::rng::{substream, DOMAIN_U, DOMAIN_V, DOMAIN_Z};
use crate::skedastic::SkedasticSpec;

/// Gaussian 97.5% critical value used for the 95% coverage intervals.
pub const Z_CRITICAL_95: f64 = 1.96;

/// Parameters of the simulated design and the replication loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Sample size per replication.
    pub n: usize,
    /// Number of Monte Carlo replications.
    pub replications: usize,
    /// Endogeneity strength (`e = U + lambda V`).
    pub lambda: f64,
    /// First-stage heteroskedasticity slope in `h^2 = gamma1 Z + gamma2`.
    pub gamma1: f64,
    /// Structural-scale coefficient on `D`.
    pub delta1: f64,
    /// Structural-scale coefficient on `D^2`.
    pub delta2: f64,
    /// True coefficient on `D`.
    pub alpha1: f64,
    /// True intercept.
    pub alpha2: f64,
    /// First-stage coefficient on `Z`.
    pub pi1: f64,
    /// First-stage intercept.
    pub pi2: f64,
    /// Structural-scale intercept.
    pub delta3: f64,
    /// First-stage variance intercept in `h^2 = gamma1 Z + gamma2`.
    pub gamma2: f64,
    /// Master seed; every replication derives its own substreams.
    pub seed: u64,
}

impl McConfig {
    /// Standard parameterization: everything not listed defaults to 1 and
    /// replications to 2000.
    pub fn new(n: usize, lambda: f64, gamma1: f64, delta1: f64, delta2: f64, seed: u64) -> Self {
        Self {
            n,
            replications: 2000,
            lambda,
            gamma1,
            delta1,
            delta2,
            alpha1: 1.0,
            alpha2: 1.0,
            pi1: 1.0,
            pi2: 1.0,
            delta3: 1.0,
            gamma2: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidConfig(format!(
                "sample size {} too small (need n >= 50)",
                self.n
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("need at least 1 replication".into()));
        }
        for (value, name) in [
            (self.lambda, "lambda"),
            (self.gamma1, "gamma1"),
            (self.delta1, "delta1"),
            (self.delta2, "delta2"),
            (self.alpha1, "alpha1"),
            (self.alpha2, "alpha2"),
            (self.pi1, "pi1"),
            (self.pi2, "pi2"),
            (self.delta3, "delta3"),
            (self.gamma2, "gamma2"),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Draws one replication of the design. Deterministic in
/// `(config.seed, rep_index)` and independent of worker count.
pub fn simulate_dgp(config: &McConfig, rep_index: u64) -> Result<Dataset> {
    config.validate()?;
    let n = config.n;
    let mut rng_z = substream(config.seed, DOMAIN_Z, rep_index);
    let mut rng_u = substream(config.seed, DOMAIN_U, rep_index);
    let mut rng_v = substream(config.seed, DOMAIN_V, rep_index);

    let mut y = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let mut z = DMatrix::zeros(n, 1);
    let x = DMatrix::from_element(n, 1, 1.0);
    for i in 0..n {
        let zi: f64 = rng_z.sample::<f64, _>(StandardNormal).abs();
        let u: f64 = rng_u.sample(StandardNormal);
        let v: f64 = rng_v.sample(StandardNormal);
        let h = (config.gamma1 * zi + config.gamma2).max(0.0).sqrt();
        let di = config.pi1 * zi + config.pi2 + h * v;
        let e = u + config.lambda * v;
        let g = config.delta1 * di + config.delta2 * di * di + config.delta3;
        z[(i, 0)] = zi;
        d[i] = di;
        y[i] = config.alpha1 * di + config.alpha2 + g * e;
    }
    Dataset::new(y, d, x, vec!["const".into()], z, vec!["z".into()])
}

/// The estimators the Monte Carlo engine can run side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Ols,
    Tsls,
    /// Control function with terms `{v, vd}`.
    Cf1,
    /// Control function with terms `{v, vd, vd2}`.
    Cf2,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Ols,
        Estimator::Tsls,
        Estimator::Cf1,
        Estimator::Cf2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ols => "ols",
            Estimator::Tsls => "2sls",
            Estimator::Cf1 => "cf1",
            Estimator::Cf2 => "cf2",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(Estimator::Ols),
            "2sls" | "tsls" => Ok(Estimator::Tsls),
            "cf1" => Ok(Estimator::Cf1),
            "cf2" => Ok(Estimator::Cf2),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator `{other}` (expected ols, 2sls, cf1, cf2)"
            ))),
        }
    }

    /// Control-function model run by the engine for this estimator, if any.
    /// Both presets normalize with the linear variance model on `(1, |Z|)`.
    fn cf_model(&self) -> Option<CfModel> {
        match self {
            Estimator::Cf1 => Some(CfModel::cf1(SkedasticSpec::linear_power())),
            Estimator::Cf2 => Some(CfModel::cf2(SkedasticSpec::linear_power())),
            _ => None,
        }
    }
}

/// Monte Carlo summary for one estimator.
#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    /// Mean of the estimate minus the true coefficient.
    pub bias: f64,
    /// Across-replication sample variance of the estimate.
    pub variance: f64,
    /// Mean of the per-replication estimated sampling variance (corrected
    /// sandwich for the control-function estimators), on the same scale as
    /// `variance`.
    pub mean_est_variance: f64,
    /// Median of the same quantity; small samples can inflate the mean.
    pub median_est_variance: f64,
    /// Share of replications whose 95% Gaussian interval covers the truth.
    pub coverage95: f64,
    /// Mean estimated variance ignoring the generated-regressor correction
    /// (control-function estimators only).
    pub mean_naive_est_variance: Option<f64>,
    /// Coverage of intervals built from the uncorrected variance.
    pub coverage95_naive: Option<f64>,
    /// Replications where this estimator failed to fit.
    pub failures: usize,
    /// Total observations with floored variance fits across replications.
    pub floored_observations: usize,
    /// Replications that produced an estimate.
    pub replications_used: usize,
}

/// Output of [`run_mc`]: one summary per requested estimator.
#[derive(Debug, Clone)]
pub struct McResult {
    pub config: McConfig,
    pub summaries: Vec<EstimatorSummary>,
}

impl McResult {
    pub fn summary(&self, estimator: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }
}

/// `(estimate, se, naive_se, floored)` for one estimator; `None` when the
/// replication's fit failed.
type RepEstimate = Option<(f64, f64, Option<f64>, usize)>;

struct RepOutcome {
    per_estimator: Vec<RepEstimate>,
}

/// Runs the replication loop for the requested estimators.
///
/// `workers` bounds the rayon pool (`None` uses the global default). Results
/// are bitwise identical for any worker count: draws are keyed by
/// replication index and aggregation walks replications in order.
pub fn run_mc(
    config: &McConfig,
    estimators: &[Estimator],
    workers: Option<usize>,
) -> Result<McResult> {
    config.validate()?;
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }

    let run = || -> Vec<RepOutcome> {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|rep| run_replication(config, rep, estimators))
            .collect()
    };
    let outcomes = match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            pool.install(run)
        }
        None => run(),
    };

    let mut summaries = Vec::with_capacity(estimators.len());
    for (e_idx, &estimator) in estimators.iter().enumerate() {
        let mut estimates = Vec::with_capacity(config.replications);
        let mut est_variances = Vec::with_capacity(config.replications);
        let mut covered = 0usize;
        let mut naive_sum = 0.0;
        let mut naive_covered = 0usize;
        let mut has_naive = false;
        let mut floored_observations = 0usize;
        for outcome in &outcomes {
            let Some((estimate, se, naive_se, floored)) = outcome.per_estimator[e_idx] else {
                continue;
            };
            estimates.push(estimate);
            est_variances.push(se * se);
            if (estimate - config.alpha1).abs() <= Z_CRITICAL_95 * se {
                covered += 1;
            }
            if let Some(nse) = naive_se {
                has_naive = true;
                naive_sum += nse * nse;
                if (estimate - config.alpha1).abs() <= Z_CRITICAL_95 * nse {
                    naive_covered += 1;
                }
            }
            floored_observations += floored;
        }
        let used = estimates.len();
        if used < 2 {
            return Err(Error::TooManyFailures {
                failed: config.replications - used,
                total: config.replications,
            });
        }
        let mean = estimates.iter().sum::<f64>() / used as f64;
        let variance = estimates
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (used as f64 - 1.0);
        let mean_est_variance = est_variances.iter().sum::<f64>() / used as f64;
        let mut sorted = est_variances;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite variances"));
        let median_est_variance = if used % 2 == 1 {
            sorted[used / 2]
        } else {
            0.5 * (sorted[used / 2 - 1] + sorted[used / 2])
        };
        summaries.push(EstimatorSummary {
            estimator,
            bias: mean - config.alpha1,
            variance,
            mean_est_variance,
            median_est_variance,
            coverage95: covered as f64 / used as f64,
            mean_naive_est_variance: has_naive.then(|| naive_sum / used as f64),
            coverage95_naive: has_naive.then(|| naive_covered as f64 / used as f64),
            failures: config.replications - used,
            floored_observations,
            replications_used: used,
        });
    }

    Ok(McResult {
        config: *config,
        summaries,
    })
}

fn run_replication(config: &McConfig, rep: u64, estimators: &[Estimator]) -> RepOutcome {
    let data = match simulate_dgp(config, rep) {
        Ok(d) => d,
        Err(_) => {
            return RepOutcome {
                per_estimator: vec![None; estimators.len()],
            }
        }
    };
    let per_estimator = estimators
        .iter()
        .map(|estimator| match estimator {
            Estimator::Ols => fit_ols(&data)
                .ok()
                .map(|f| (f.alpha1, f.se_alpha1(), None, 0)),
            Estimator::Tsls => fit_2sls(&data)
                .ok()
                .map(|f| (f.alpha1, f.se_alpha1(), None, 0)),
            Estimator::Cf1 | Estimator::Cf2 => {
                let model = estimator.cf_model().expect("cf estimators carry a model");
                fit_cf(&data, &model).ok().map(|f| {
                    (
                        f.alpha1,
                        f.se_alpha1(),
                        Some(f.se_alpha1_naive()),
                        f.first_stage.skedastic.floored_count,
                    )
                })
            }
        })
        .collect();
    RepOutcome { per_estimator }
}
