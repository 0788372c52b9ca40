use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Input problems (`InvalidInput`, `ShapeMismatch`, `Unclassifiable`, `Format`)
/// are distinguished from numerical failures (`ConstraintInfeasible`,
/// `NotConverged`) so the command-line front end can map them onto distinct
/// exit codes.
#[derive(Debug, Error)]
pub enum AsccError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("unclassifiable scatterer{}: alpha={alpha}, L={length} does not match any geometric type", index.map(|i| format!(" #{i}")).unwrap_or_default())]
    Unclassifiable {
        alpha: f64,
        length: f64,
        index: Option<usize>,
    },

    #[error("constraint infeasible: clamped violation norm {violation_norm:e} exceeds tolerance {tolerance:e}")]
    ConstraintInfeasible { violation_norm: f64, tolerance: f64 },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<AsccError>,
    },

    #[error("solver did not converge: relative change {rel_change:e} after {iters} iterations")]
    NotConverged { iters: usize, rel_change: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AsccError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AsccError::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        AsccError::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// True for numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            AsccError::ConstraintInfeasible { .. } | AsccError::NotConverged { .. } => true,
            AsccError::Layer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, AsccError>;
