//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolvError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid flow parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular chart: {0}")]
    SingularChart(String),
    #[error("invalid start: {0}")]
    InvalidStart(String),
    #[error("non-finite vector field at r={r}, phi={phi}, s={s}, tau={tau}")]
    NonFinite { r: f64, phi: f64, s: f64, tau: f64 },
    #[error("parity mismatch: {0}")]
    Parity(String),
    #[error("threshold: {detail} (r0={r0})")]
    Threshold { r0: f64, detail: String },
    #[error("non-integrable: {0}")]
    NonIntegrable(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("asymptotic model class undetermined: {0}")]
    ModelClass(String),
    #[error("tail too short: reached r={reached}, need r>={needed}")]
    TailTooShort { reached: f64, needed: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl SolvError {
    /// Process exit code: 1 for domain/validation failures, 2 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            SolvError::NonFinite { .. }
            | SolvError::NonIntegrable(_)
            | SolvError::Numerical(_)
            | SolvError::TailTooShort { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SolvError>;
