use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid needs at least {min} nodes, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("potential is not convex at node {index} (second derivative {value:e})")]
    NotConvex { index: usize, value: f64 },

    #[error("degenerate metric at node {index}: density {value:e} below threshold")]
    DegenerateMetric { index: usize, value: f64 },

    #[error("moment map leaves (0,1) at node {index}: slope {value}")]
    SlopeOutOfRange { index: usize, value: f64 },

    #[error("potential is unbounded relative to the reference near the {side} edge")]
    UnboundedTail { side: &'static str },

    #[error("density does not integrate to one: total mass {mass}")]
    NotNormalized { mass: f64 },

    #[error("negative density at node {index}: {value:e}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("Legendre solve failed at {coordinate} = {value}")]
    LegendreFailure {
        coordinate: &'static str,
        value: f64,
    },

    #[error("quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },

    #[error("Bergman series tail not certified after {terms} terms")]
    TailNotCertified { terms: usize },

    #[error("evaluation radius {radius} too close to the disc boundary")]
    NearBoundary { radius: f64 },

    #[error("weight is not subharmonic at r = {radius}")]
    NotSubharmonic { radius: f64 },

    #[error("ill-conditioned Gram matrix in angular block m = {mode}")]
    IllConditioned { mode: i32 },

    #[error("basis index out of range: {0}")]
    BasisOverflow(String),

    #[error("parameter t = {t} outside the path interior")]
    OutsideInterior { t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
