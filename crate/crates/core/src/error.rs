use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: input is empty")]
    Empty { context: &'static str },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error(
        "matrix is not symmetric: max asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e}"
    )]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error(
        "Jacobi eigensolver did not converge in {sweeps} sweeps (off-diagonal norm {off_norm:.3e})"
    )]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("zero-norm vector in {context}")]
    ZeroNorm { context: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged in {stage} (round {round}): {detail}")]
    Diverged {
        stage: &'static str,
        round: usize,
        detail: String,
    },

    #[error("attack stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
