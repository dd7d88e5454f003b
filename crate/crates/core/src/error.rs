use thiserror::Error;

use crate::solver::SolveReport;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("arc nodes are collinear (sagitta {sagitta:e} m)")]
    DegenerateArc { sagitta: f64 },
    #[error("point coincides with the arc center")]
    AmbiguousProjection,
    #[error("non-finite covariance entry at ({row}, {col})")]
    NonFiniteCovariance { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("association boundary {index} out of range for {len} points")]
    AssociationOutOfRange { index: usize, len: usize },
    #[error("association has {got} boundaries, expected {expected}")]
    AssociationShape { got: usize, expected: usize },
    #[error("segment {segment} owns fewer than 3 points")]
    EmptySegment { segment: usize },
    #[error("segment {segment}: {source}")]
    Degenerate {
        segment: usize,
        #[source]
        source: GeometryError,
    },
    #[error("node vector length {len} is not 2(2m+1) for m >= 1")]
    NodeVectorLength { len: usize },
    #[error("minimum length must be positive, got {0}")]
    NonPositiveMinLength(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("normal equations are numerically singular")]
    SingularNormalEquations,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Failure raised by a problem's evaluator at a trial point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed: {0}")]
pub struct EvaluationError(pub String);

impl From<ModelError> for EvaluationError {
    fn from(e: ModelError) -> Self {
        EvaluationError(e.to_string())
    }
}

#[derive(Debug, Clone, Error)]
pub enum FitError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solver failed ({:?}) after {} outer iterations", .0.termination, .0.outer_iterations)]
    Solver(Box<SolveReport>),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("state {state}: {message}")]
    State { state: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
