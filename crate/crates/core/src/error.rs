use thiserror::Error;

#[derive(Debug, Error)]
pub enum PeticError {
    /// A scenario or parameter block violates a documented constraint.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("numerical blow-up at t = {t}: {detail}")]
    BlowUp { t: f64, detail: String },

    #[error("ensemble failure: {excluded} of {runs} runs diverged{}", first_error.as_ref().map(|e| format!(" (first: {e})")).unwrap_or_default())]
    EnsembleFailure {
        excluded: usize,
        runs: usize,
        first_error: Option<String>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PeticError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        PeticError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PeticError>;
