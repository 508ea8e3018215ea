use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("sample does not match rule alphabet: {0}")]
    Alphabet(String),

    #[error("requested {requested} samples but the rule only has {available} valid samples (count_valid)")]
    SupportExceeded { requested: usize, available: u128 },

    #[error("rejection budget exhausted after {attempts} attempts")]
    RejectionBudget { attempts: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("enumeration of {count} samples exceeds cap {cap}")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("noise level must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("stage `{stage}` failed: {msg}")]
    Stage { stage: String, msg: String },

    #[error("parse error in {path:?}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
