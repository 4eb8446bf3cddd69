use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("gmsh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("point ({x}, {y}) is not inside any triangle")]
    PointNotFound { x: f64, y: f64 },

    #[error("degenerate triangle {0} (zero or negative area)")]
    DegenerateElement(usize),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("Cholesky factorization of block {block} failed (matrix not positive definite)")]
    CholeskyBreakdown { block: &'static str },

    #[error("problem too large for a dense eigensolve: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("Newton iteration diverged (residual {residual:e} vs initial {initial:e}); try continuation in the viscosity")]
    Divergence { residual: f64, initial: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing reference solution for lambda = {0}")]
    MissingReference(f64),

    #[error("sampler failure: {message} (step sizes: {step_sizes:?})")]
    Sampler {
        message: String,
        step_sizes: Vec<f64>,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code category: 1 numeric, 2 usage, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) | Error::Parse { .. } => 3,
            Error::Config(_) | Error::InvalidDomain(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
