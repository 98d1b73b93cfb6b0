use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("series are not sampled on the same time grid")]
    GridMismatch,

    #[error("expected a series in {expected}, got {found}")]
    UnitMismatch { expected: &'static str, found: &'static str },

    #[error("loop unstable at t = {time_s:.6} s: error {error_s:.3e} s exceeds {limit_s:.3e} s")]
    LoopInstability { time_s: f64, error_s: f64, limit_s: f64 },

    #[error("power budget: SBS ceiling exceeded at {node} ({power_mw:.2} mW per sideband > {ceiling_mw:.2} mW)")]
    SbsCeiling { node: String, power_mw: f64, ceiling_mw: f64 },

    #[error("power budget fails: {reason}")]
    BudgetFailure { reason: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

pub(crate) fn require_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {value}")))
    }
}
