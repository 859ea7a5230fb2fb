use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("coefficient matrix not symmetric at {location} (asymmetry {asymmetry:e})")]
    NotSymmetric { location: String, asymmetry: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("ambiguous degeneracy on face {face}: {detail}")]
    AmbiguousFace { face: String, detail: String },

    #[error("point {point} does not lie on face {face}")]
    NotOnFace { face: String, point: String },

    #[error("normal undefined on corner face {0}")]
    CornerNormal(String),

    #[error("node {0} lies on the non-degenerate boundary")]
    NodeOnNondegenerateBoundary(String),

    #[error("grid too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("outflow on degenerate boundary at node {node}: b_perp = {b_perp:e}")]
    DegenerateOutflow { node: String, b_perp: f64 },

    #[error("non-positive conjugation weight {value:e} at node {node}")]
    NonPositiveWeight { node: usize, value: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("assembled system is not monotone: {0}")]
    NotMonotone(String),

    #[error("obstacle incompatible with boundary data: {0}")]
    Incompatible(String),

    #[error("projected SOR did not converge after {iterations} sweeps (residual {residual:e})")]
    PsorNonConvergence { iterations: usize, residual: f64 },

    #[error("hypotheses not satisfied: {0}")]
    RegimeMismatch(String),

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
