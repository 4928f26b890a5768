use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("mesh relaxation stalled: max relative strut length deviation {achieved:.4} exceeds {target:.4}")]
    Relaxation { achieved: f64, target: f64 },
    #[error("periodic pairing inconsistent: {0}")]
    Pairing(String),
    #[error("outside density map domain: c2*(kappa+c3) = {0:.6} must lie in (0, 1)")]
    DensityDomain(f64),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_) | Error::Relaxation { .. } | Error::NoConvergence(_) | Error::NonFinite(_))
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
