/// Errors produced by the moeflow library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in layer {layer}")]
    NonFiniteLayer { layer: usize },

    #[error("non-finite loss{}", fmt_row(.row))]
    NonFiniteLoss { row: Option<usize> },

    #[error("non-finite state at Euler step {step}")]
    NonFiniteState { step: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        /// Parameters from the last step whose loss was finite.
        last_finite: Box<crate::checkpoint::Checkpoint>,
    },

    #[error("effective sample size {ess:.1} below {min}; increase mc_samples or the kernel bandwidth")]
    LowEffectiveSampleSize { ess: f64, min: f64 },

    #[error("integration failed for {} sample(s), first at index {}", .failures.len(), .failures[0].0)]
    GenerationFailed { failures: Vec<(usize, String)> },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_row(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl Error {
    /// True for errors that stem from bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::Unsupported(_)
                | Error::Format(_)
                | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
