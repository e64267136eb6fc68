use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate reflection vector (norm {norm:e})")]
    DegenerateVector { norm: f64 },

    #[error("time {t} outside basis domain [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },

    #[error("non-finite value while evaluating dynamics at t = {t}")]
    NumericOverflow { t: f64 },

    #[error("solver diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },

    #[error("divergence in example {index}: {source}")]
    ExampleDivergence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
}

impl Error {
    /// True for blow-up of the solve (as opposed to misuse of the API).
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::NumericOverflow { .. } | Error::Divergence { .. } | Error::NonFiniteGradient { .. } => true,
            Error::ExampleDivergence { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { op, expected, got });
    }
    Ok(())
}
