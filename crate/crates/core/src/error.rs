use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPositiveSemiDefinite(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("ill-posed configuration: condition estimate {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("insufficient decay: {usable} usable points above the plateau floor (need at least 3)")]
    InsufficientDecay { usable: usize },

    #[error("degenerate likelihood: every importance weight underflowed")]
    DegenerateLikelihood,

    #[error("zero likelihood at particle {index}")]
    ZeroLikelihood { index: usize },

    #[error("forward model failed at particle {index}: {source}")]
    ParticleEvaluation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance history holds summaries only; full matrices are required here")]
    SummaryOnly,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
