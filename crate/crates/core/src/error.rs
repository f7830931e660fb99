use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),

    #[error("matrix is not an orthonormal frame: residual {0:.3e}")]
    NotStiefel(f64),

    #[error("vector is not tangent at its base point: residual {0:.3e}")]
    InvalidTangent(f64),

    #[error("initial rotation does not project onto the first sample: residual {0:.3e}")]
    InconsistentFrame(f64),

    #[error("tangent vectors live at different base points")]
    BaseMismatch,

    /// The principal logarithm is ambiguous; the caller should sample faster.
    #[error("rotation angle {angle:.9} is within {margin:e} of pi; reduce the sampling step")]
    BranchAmbiguity { angle: f64, margin: f64 },

    #[error("interpolation scheme unsupported here: {0}")]
    UnsupportedScheme(String),

    #[error("all particle weights vanished at sample {step}")]
    DegenerateEnsemble { step: usize },

    #[error("weights are not normalized: total mass {0}")]
    Unnormalized(f64),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for validation failures, 3 for
    /// numerical failures, 1 for everything else (I/O and parsing).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidDimension(_)
            | Error::DimensionMismatch(_)
            | Error::NotRotation(_)
            | Error::NotStiefel(_)
            | Error::InvalidTangent(_)
            | Error::BaseMismatch
            | Error::InconsistentFrame(_)
            | Error::UnsupportedScheme(_)
            | Error::InvalidConfig(_)
            | Error::GridMismatch(_) => 2,
            Error::BranchAmbiguity { .. }
            | Error::DegenerateEnsemble { .. }
            | Error::Unnormalized(_)
            | Error::NumericalInstability(_) => 3,
            Error::Verification(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}
