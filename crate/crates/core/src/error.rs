use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("integration failed at t = {t:e} s (z = {z:e} m, v = {v:e} m/s): {reason}")]
    IntegrationFailure { t: f64, z: f64, v: f64, reason: String },

    #[error("harmonic model inapplicable: {0}")]
    ModelInapplicable(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no zero crossing found: {0}")]
    NotFound(String),

    #[error("stage {stage} event not found before the {cap} s time cap")]
    ProtocolTimeout { stage: usize, cap: f64 },

    #[error("closure search failed; best residual {best_residual:e}")]
    SearchFailure { best_residual: f64 },

    #[error("closure phase violated: sqrt(A)*t / 2pi = {cycles} is not an integer")]
    ClosurePhase { cycles: f64 },

    #[error("grid resolution: {0}")]
    Resolution(String),

    #[error("wavepacket reached the grid boundary at t = {t:e} s (edge probability {mass:e})")]
    BoundaryEscape { t: f64, mass: f64 },

    #[error("configuration: {0}")]
    Config(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
