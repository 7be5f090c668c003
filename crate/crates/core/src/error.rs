//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures surfaced by estimation, inference, and simulation routines.
///
/// Diagnostics that do not invalidate a result (weak instruments, floored
/// variance fits, non-converged variance models returning their best iterate)
/// are reported as fields on the corresponding result types instead.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A NaN or infinity reached a numerical routine.
    #[error("non-finite value in {context}")]
    NonFiniteInput { context: String },

    /// The design matrix has numerically dependent columns.
    #[error(
        "rank-deficient design: numerical rank {rank} of {cols} columns \
         (condition number {condition_number:.3e})"
    )]
    RankDeficient {
        rank: usize,
        cols: usize,
        condition_number: f64,
    },

    /// Inputs that should have matching shapes do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Two regressor columns carry the same label.
    #[error("duplicate column label `{label}`")]
    DuplicateColumn { label: String },

    /// Every squared first-stage residual is zero, so no variance model can
    /// be identified.
    #[error("all squared residuals are zero; the variance function is unidentified")]
    AllResidualsZero,

    /// The simulated instrument carries no signal, so the asymptotic-bias
    /// ratio is undefined.
    #[error("degenerate instrument in bias oracle: sigma_h = {sigma_h:.3e}")]
    DegenerateInstrument { sigma_h: f64 },

    /// The first-stage parameter covariance block cannot be inverted.
    #[error("singular first-stage covariance (sigma_phi)")]
    SingularSigmaPhi,

    /// The second-stage regressor Gram matrix cannot be inverted.
    #[error("singular regressor Gram matrix (sigma_alpha)")]
    SingularSigmaAlpha,

    /// More than half of the bootstrap replicates failed to fit.
    #[error("{failed} of {total} bootstrap replicates failed; refusing to summarize")]
    TooManyFailures { failed: usize, total: usize },

    /// A caller-supplied configuration value is out of range or unparseable.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
