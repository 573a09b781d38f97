use thiserror::Error;

/// Errors surfaced by the model library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The mobile sits exactly on an interfering site; gain ratios toward
    /// that site are unbounded and the scenario is rejected.
    #[error("degenerate MS position: co-located with site {site}")]
    DegeneratePosition { site: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A quadrature kernel produced a non-finite value.
    #[error("numerical domain error at point {point:?}: {what}")]
    NumericalDomain { point: Vec<f64>, what: String },

    /// Total camping probability is zero; conditional moments are undefined.
    #[error("no coverage: camping probability is zero for this scenario")]
    NoCoverage,

    #[error("insufficient samples in subset: got {got}, need {need}")]
    InsufficientSamples { got: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;
