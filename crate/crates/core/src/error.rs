use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An integrated flow left the configured bound (finite-time explosion).
    #[error("blow-up in {what} at t = {t}: norm {norm:e} exceeds bound {bound:e}")]
    BlowUp {
        what: &'static str,
        t: f64,
        norm: f64,
        bound: f64,
    },

    #[error("singular {what} at t = {t}")]
    Singular { what: &'static str, t: f64 },

    /// The Gaussian exponential moment does not exist.
    #[error("non-integrable exponential moment at t = {t}: {detail}")]
    NonIntegrable { t: f64, detail: String },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. } | Error::Singular { .. } | Error::NonIntegrable { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
