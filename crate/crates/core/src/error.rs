use thiserror::Error;

/// Errors raised by field construction, exterior algebra, flow integration and the runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown catalog field `{0}`")]
    UnknownField(String),
    #[error("catalog field `{name}` expects {expected} parameters, got {got}")]
    ParamCount {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("catalog field `{name}` does not support dimension {n}")]
    UnsupportedDimension { name: String, n: usize },
    #[error("non-finite sample encountered at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degree error: {0}")]
    Degree(String),
    #[error("derivatives of order {0} are not available")]
    MissingDerivatives(u8),
    #[error("singular Jacobian (det = {0:e})")]
    SingularJacobian(f64),
    #[error("inverse Jacobian not available")]
    MissingInverse,
    #[error("time grid mismatch: {0}")]
    Grid(String),
    #[error("channel {0} is not present in the driver")]
    Channel(usize),
    #[error("{excluded} of {total} paths excluded, above the 1% limit")]
    TooManyExcluded { excluded: usize, total: usize },
    #[error("path {0} was excluded after blow-up")]
    ExcludedPath(usize),
    #[error("inverse flow did not converge at {0:?}")]
    InverseFailed(Vec<f64>),
    #[error("field is not periodic on the torus: {0}")]
    NotPeriodic(String),
    #[error("unsupported tensor type: {0}")]
    Unsupported(String),
    #[error("degenerate loop: {0}")]
    DegenerateLoop(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
