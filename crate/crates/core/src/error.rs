use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("infeasible box: z_a > z_b at node {node} ({lower} > {upper})")]
    InfeasibleBox { node: usize, lower: f64, upper: f64 },

    #[error("coefficient violates ellipticity floor at node {node}: a = {value} < {floor}")]
    NotElliptic { node: usize, value: f64, floor: f64 },

    #[error("negative potential at node {node}: {value}")]
    NegativePotential { node: usize, value: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("grid too large for dense backend: {size} unknowns exceed limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("derivative of order {requested} not available (nonlinearity provides up to {available})")]
    DerivativeUnavailable { requested: usize, available: usize },

    #[error("second derivative singular at node {node} (u = 0, 1 < q < 2)")]
    SingularDerivative { node: usize },

    #[error("NaN encountered while evaluating {0}")]
    NanEncountered(&'static str),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Best iterate reached, when the solver has one.
        best: Option<Box<crate::grid::GridFunction>>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
