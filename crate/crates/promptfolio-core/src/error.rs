//! Error taxonomy shared across the crate.
//!
//! The CLI maps these onto its stable exit codes: config problems exit 2,
//! the divergence guard exits 3, verification failures exit 1.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("prompt dimension m_p = {m_p} is too small for 1 + S + L = {needed} orthogonal features")]
    DimensionTooSmall { m_p: usize, needed: usize },

    #[error("invalid norm {value} for feature group {group}: norms must be > 0")]
    InvalidNorm { group: &'static str, value: f64 },

    #[error("invalid noise std sigma_p = {0}: must be {1}")]
    InvalidSigma(f64, &'static str),

    #[error("unknown client id {k} (K = {k_total})")]
    UnknownClient { k: usize, k_total: usize },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("mixing coefficient theta = {0} is outside [0, 1]")]
    ThetaOutOfRange(f64),

    #[error("invalid label {0}: labels are +1 or -1")]
    InvalidLabel(f64),

    #[error("empty batch: gradients need at least one sample")]
    EmptyBatch,

    #[error("empty test set: evaluation needs at least one sample")]
    EmptyTestSet,

    #[error("divergence guard: prompt norm {norm:.3e} exceeded bound {bound:.3e} at round {round}, step {step}")]
    Divergence {
        norm: f64,
        bound: f64,
        round: usize,
        step: usize,
    },

    #[error("aggregation weights must be positive (weight {value} at index {index})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("invalid dirichlet alpha = {0}: must be > 0")]
    InvalidAlpha(f64),

    #[error("denominator vanished in {0}")]
    ZeroDenominator(&'static str),

    #[error("theta* denominator (a + b^2) - rho*b*(a + 1) vanished for a={a}, b={b}, rho={rho}")]
    DegenerateThetaStar { a: f64, b: f64, rho: f64 },

    #[error("undefined test model: sigma = 0 with mu = 0")]
    UndefinedModel,

    #[error("K = {0} is too small for the order-level predictor (needs K >= 2)")]
    KTooSmall(usize),

    #[error("trajectory too short: {got} rounds, diagnostics need at least {needed}")]
    InsufficientTrajectory { got: usize, needed: usize },

    #[error("no learning rate accepted: halving search reached {0:.3e} without a monotone loss")]
    EtaSearchFailed(f64),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("verification failure: {0}")]
    VerifyFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Convenience constructor for config validation failures.
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
