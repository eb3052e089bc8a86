use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PglmmError>;

#[derive(Debug, Error)]
pub enum PglmmError {
    #[error("constant column {column}: standardization requires nonzero variance")]
    ConstantColumn { column: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid response {value} for {family} family at row {row}")]
    InvalidResponse { family: &'static str, row: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("MCP majorizer is non-convex: curvature {curvature} x gamma_scale {gamma_scale} <= 1")]
    NonConvexMajorizer { curvature: f64, gamma_scale: f64 },

    #[error("SCAD majorizer is non-convex: curvature {curvature} x (gamma_scale {gamma_scale} - 1) <= 1")]
    NonConvexScad { curvature: f64, gamma_scale: f64 },

    #[error("non-finite posterior log-density for group {group}")]
    NonFiniteDensity { group: usize },

    #[error("non-finite working residuals in the M-step")]
    NonFiniteResiduals,

    #[error("coefficient diverged (|value| = {magnitude:e}); the data may be separable")]
    Divergence { magnitude: f64 },

    #[error("at least two groups are required, found {0}")]
    InsufficientGroups(usize),

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PglmmError {
    /// True for failures caused by the numerical procedure rather than by
    /// malformed input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PglmmError::NonFiniteDensity { .. }
                | PglmmError::NonFiniteResiduals
                | PglmmError::Divergence { .. }
                | PglmmError::NonConvexMajorizer { .. }
                | PglmmError::NonConvexScad { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PglmmError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PglmmError::Format { path: path.into(), message: message.into() }
    }
}
