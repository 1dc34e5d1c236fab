use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the spectral geometry toolkit.
#[derive(Debug, Error)]
pub enum PmcError {
    /// Inconsistent sizes, degrees or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that cannot be processed (non-finite values, bad shapes).
    #[error("data error: {0}")]
    Data(String),

    /// Evaluation requested where a chart is not valid.
    #[error("domain error: node {node} is masked in the {chart} chart")]
    Domain { node: usize, chart: &'static str },

    /// The conformality precondition of the mean-curvature equation failed.
    #[error("precondition violated: conformality sup-norm {sup_norm:e} exceeds {tolerance:e}")]
    NotConformal { sup_norm: f64, tolerance: f64 },

    /// Prescribed mean curvature must be strictly positive.
    #[error("rejected input: target mean curvature {min:e} is not positive")]
    NonPositiveTarget { min: f64 },

    /// A linear system that must be uniquely solvable was numerically singular.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PmcError>;

impl PmcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PmcError::Io {
            path: path.into(),
            source,
        }
    }
}
