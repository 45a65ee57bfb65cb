use thiserror::Error;

/// Errors produced by operator construction, solvers, and the experiment
/// harness.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid dimension: {what} requires {requirement}, got {got}")]
    InvalidDimension {
        what: &'static str,
        requirement: &'static str,
        got: usize,
    },

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical rank failure in {context}: pivot {value:.3e} below tolerance")]
    NumericalRank { context: &'static str, value: f64 },

    #[error("invalid shift strategy: {0}")]
    InvalidStrategy(String),

    #[error("phantom side {got} too small: ellipses unresolvable below {min}")]
    PhantomTooSmall { min: usize, got: usize },

    #[error("infeasible jump count: {jumps} jumps cannot fit in a signal of length {len}")]
    InfeasibleJumps { jumps: usize, len: usize },

    #[error("SNR is undefined for a zero noise vector")]
    UndefinedSnr,

    #[error("relative error is undefined for a zero truth vector")]
    UndefinedRelativeError,

    #[error("cannot scale noise to a target SNR for a zero signal")]
    CannotScaleNoise,

    #[error("regularization weight must be positive, got {0}")]
    NonPositiveLambda(f64),

    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("posterior factorization failed; offending coefficient indices {indices:?}")]
    FactorizationFailed { indices: Vec<usize> },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
