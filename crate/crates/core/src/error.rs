use thiserror::Error;

pub type Result<T> = std::result::Result<T, PmlError>;

#[derive(Debug, Error)]
pub enum PmlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular Sylvester system: eigenvalue sum {sum:e} (a: {eig_a}, b: {eig_b})")]
    SingularSystem {
        sum: f64,
        eig_a: String,
        eig_b: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("numerical divergence at iteration {iteration}: non-finite {term}")]
    NumericalDivergence { iteration: usize, term: String },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PmlError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        PmlError::InvalidInput(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PmlError::InvalidInput(_)
            | PmlError::SingularSystem { .. }
            | PmlError::Parse { .. }
            | PmlError::Validation { .. }
            | PmlError::ModelFormat(_)
            | PmlError::Json(_) => 2,
            PmlError::NumericalDivergence { .. } => 3,
            PmlError::Io(_) => 4,
        }
    }
}
