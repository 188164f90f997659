use thiserror::Error;

/// Failures raised by the analysis pipeline.
///
/// Variants are grouped by who is at fault: bad input (`Dimension`,
/// `InvalidInput`, `NotSpd`, `Compatibility`), a violated modelling
/// assumption (`AssumptionViolated`, `GkcViolated`, `UnboundedLayer`,
/// `OutsideNeighborhood`), or a numerical/internal inconsistency.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix {0} is not symmetric positive definite")]
    NotSpd(String),

    #[error("ambiguous multiplicity: eigenvalue {eigenvalue:.3e} lies in the refusal band ({lower:.3e}, {upper:.3e})")]
    AmbiguousMultiplicity { eigenvalue: f64, lower: f64, upper: f64 },

    #[error("{what} is numerically singular (condition {condition:.3e})")]
    Singular { what: String, condition: f64 },

    #[error("eigenvalue {re:.3e}{im:+.3e}i too close to the imaginary axis (threshold {threshold:.3e})")]
    BoundarySpectrum { re: f64, im: f64, threshold: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("modified Kreiss condition violated: {0}")]
    GkcViolated(String),

    #[error("layer data excites unstable modes (residual {residual:.3e})")]
    UnboundedLayer { residual: f64 },

    #[error("outside the neighborhood of validity: {0}")]
    OutsideNeighborhood(String),

    #[error("initial data incompatible with boundary data (residual {residual:.3e})")]
    Compatibility { residual: f64 },

    #[error("solution blew up at t = {time:.6}")]
    BlowUp { time: f64 },

    #[error("internal consistency failure: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
