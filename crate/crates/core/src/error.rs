use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("transition matrix is not stationary (spectral radius {0:.6})")]
    NonStationary(f64),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("configuration rejected:\n{0}")]
    Validation(crate::model::ValidationReport),

    #[error("{update} failed at iteration {iteration}: {source}")]
    Update {
        update: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("corrupt draw file: {0}")]
    Corrupt(String),

    #[error("draw file format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_) | Error::NonStationary(_) => true,
            Error::Update { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn in_update(self, update: &'static str, iteration: usize) -> Error {
        Error::Update {
            update,
            iteration,
            source: Box::new(self),
        }
    }
}
