//! Control-function estimation for linear models whose endogenous regressor
//! has instrument-dependent first-stage variance.
//!
//! Two-stage least squares stays consistent only when the first-stage error
//! scale is unrelated to the instrument. When the scale moves with the
//! instrument and the outcome error loads on the first-stage shock through a
//! regressor-dependent coefficient, the usual IV moment picks up a bias term.
//! This crate implements:
//!
//! - a variance-rescaled control-function estimator: regress the endogenous
//!   variable on instruments, rescale the residual by a fitted skedastic
//!   function, and add polynomial terms in the rescaled residual (optionally
//!   interacted with the endogenous regressor) to the outcome equation
//!   ([`cf`], [`skedastic`]);
//! - analytic standard errors that propagate first-step estimation error
//!   through an influence-function sandwich, plus a pairs bootstrap
//!   ([`inference`]);
//! - baseline OLS/2SLS fits and a Monte Carlo oracle for the 2SLS
//!   inconsistency under a given design ([`estimators`], [`bias_oracle`]);
//! - a deterministic, parallel Monte Carlo harness with grid presets and
//!   table rendering ([`simulation`], [`report`]).
//!
//! All linear algebra goes through QR with explicit rank checks
//! ([`linalg`]); random streams are counter-derived per replication and
//! domain so results do not depend on worker count ([`rng`]).

pub mod bias_oracle;
pub mod cf;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod simulation;
pub mod skedastic;

pub use bias_oracle::{bias_oracle_2sls, BiasOracleResult};
pub use cf::{
    build_regressors, build_regressors_at, fit_cf, fit_first_stage, regressor_jacobian, CfFit,
    CfModel, CfTerm, FirstStageFit, Phi,
};
pub use data::Dataset;
pub use error::{Error, Result};
pub use estimators::{fit_2sls, fit_ols, LinearFit};
pub use inference::{
    bootstrap, hc0_sandwich, phi_inference, sandwich_variance, BootstrapResult, PhiInference,
    SandwichResult,
};
pub use linalg::{ols_solve, residualize, DesignMatrix, ProjectionResult};
pub use report::{mc_rows, rows_to_csv, rows_to_markdown, run_grid, GridSpec, McRow};
pub use simulation::{run_mc, simulate_dgp, Estimator, EstimatorSummary, McConfig, McResult};
pub use skedastic::{fit_skedastic, SkedasticFamily, SkedasticFit, SkedasticSpec};
