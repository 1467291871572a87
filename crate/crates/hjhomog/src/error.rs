use std::path::PathBuf;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending input without holding on to the inputs themselves.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expression `{src}`: {msg} (byte {at})")]
    ExprParse { src: String, at: usize, msg: String },

    #[error("variable `{name}` not available here ({context})")]
    BadVariable { name: String, context: String },

    #[error("component index {index} out of range for a system with M={m}")]
    ComponentIndex { index: usize, m: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("discounted cell iteration did not reach tol={tol:e} within {iters} sweeps (residual {residual:e}, alpha {alpha})")]
    CellNoConvergence {
        alpha: f64,
        iters: usize,
        residual: f64,
        tol: f64,
    },

    #[error("Hamiltonian looks non-coercive: H stayed <= {bound} out to |q-p| = {radius} in some direction")]
    NonCoercive { bound: f64, radius: f64 },

    #[error("query outside the tabulated hull: {0}")]
    OutOfHull(String),

    #[error("table build failed at {failed} of {total} lattice nodes; first failures: {details}")]
    TableBuild {
        failed: usize,
        total: usize,
        details: String,
    },

    #[error("{path}: bad file format: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unstable evolution: {0}")]
    Unstable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
