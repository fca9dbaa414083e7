use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its admissible range.
    #[error("invalid {field}: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("inputs {i} and {j} are parallel")]
    ParallelPoints { i: usize, j: usize },

    #[error("input {index} has norm {norm}, expected common radius {radius}")]
    RadiusMismatch {
        index: usize,
        norm: f64,
        radius: f64,
    },

    #[error("degenerate Gram matrix: smallest pivot {smallest_pivot:e} after jitter {jitter:e}")]
    DegenerateGram { smallest_pivot: f64, jitter: f64 },

    #[error("degenerate H: smallest pivot {smallest_pivot:e} (parallel or near-parallel points)")]
    DegenerateKernel { smallest_pivot: f64 },

    #[error("divergence at iteration {iteration}: non-finite loss or weights")]
    Divergence { iteration: usize },

    #[error("zero variance labels cannot be standardized")]
    ZeroVariance,

    #[error("gave up after {attempts} attempts to draw a dataset without parallel points")]
    RetryExhausted { attempts: usize },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    /// Numerical failures (as opposed to bad input) the CLI maps to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGram { .. }
                | Error::DegenerateKernel { .. }
                | Error::Divergence { .. }
        )
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
