use thiserror::Error;

/// Errors raised by the solver, its oracles and the diagnostics layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of blocks, operators or vectors do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter is outside its admissible range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numerical procedure failed (non-finite values, iteration caps).
    /// `estimate` carries the best value found when one exists.
    #[error("numeric failure: {msg}")]
    Numeric { msg: String, estimate: Option<f64> },

    /// The accelerated inner loop failed for one block of one outer iteration.
    #[error("inner loop failed at outer iteration {k}, block {block}, inner step {l}: {msg}")]
    Inner {
        k: usize,
        block: usize,
        l: usize,
        msg: String,
    },

    /// A quantity was evaluated outside its domain (e.g. an infinite objective).
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested feature is not available for this configuration.
    #[error("unavailable: {0}")]
    Unavailable(String),

    /// A candidate reference pair failed the KKT gate.
    #[error("reference rejected: KKT error {kkt:e} exceeds {tol:e}")]
    Rejected { kkt: f64, tol: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            msg: msg.into(),
            estimate: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
