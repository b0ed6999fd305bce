use thiserror::Error;

/// Errors produced by the analysis and simulation routines.
#[derive(Debug, Error)]
pub enum HlvError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("exponent {value:.6e} exceeds the overflow guard of +/-700")]
    Overflow { value: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty level set: level {level:.12e} lies below the well minimum {minimum:.12e}")]
    EmptyLevelSet { level: f64, minimum: f64 },

    #[error("orbit is not periodic (class: {class})")]
    NotPeriodic { class: String },

    #[error("period {estimate:.6e} exceeds the configured cap {cap:.6e}")]
    PeriodCap { cap: f64, estimate: f64 },

    #[error("symplectic step too large: relative energy jump {rel_jump:.3e} at t = {time:.6e}")]
    StepTooLarge { time: f64, rel_jump: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HlvError>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> HlvError {
    HlvError::InvalidField {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Largest exponent accepted before `exp` is considered an overflow.
pub const EXP_GUARD: f64 = 700.0;

pub(crate) fn guarded_exp(x: f64) -> Result<f64> {
    if !(x.abs() <= EXP_GUARD) {
        return Err(HlvError::Overflow { value: x });
    }
    Ok(x.exp())
}
