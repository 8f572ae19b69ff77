use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape, domain or invariant violation in the inputs.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The model's survival function vanished at the requested age.
    #[error("survival underflow at age {age}: S(x) = {survival:e}")]
    Underflow { age: f64, survival: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Iteration { iterations: usize, residual: f64 },

    #[error("capacity exceeded: {what} = {requested} > cap {cap}")]
    Capacity {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Stable process exit code for each error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Structural(_) => 2,
            Error::Parse { .. } => 3,
            Error::Io(_) | Error::Json(_) => 4,
            Error::Numeric(_) | Error::Underflow { .. } => 5,
            Error::Iteration { .. } | Error::Optimization(_) => 6,
            Error::Capacity { .. } => 7,
        }
    }
}
