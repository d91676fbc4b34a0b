use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("degenerate loss mask: every position is masked out")]
    DegenerateMask,

    #[error("uninitialized gradient for parameter '{0}'")]
    UninitializedGradient(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual})")]
    SvdConvergence { sweeps: usize, residual: f64 },

    #[error("sequence too long: {0}")]
    Length(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dependency error: missing required artifact {0}")]
    Dependency(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("corrupt weight file: {0}")]
    WeightFormat(String),
}

impl Error {
    /// Process exit code for the CLI: 2 configuration, 3 dependency,
    /// 4 frozen-weight integrity, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Dependency(_) => 3,
            Error::Integrity(_) => 4,
            _ => 1,
        }
    }
}
