use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value became NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A Langevin chain left the finite reals.
    #[error("sampler diverged at t={t}, k={k}")]
    Divergence { t: usize, k: usize },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}, t={t:?}")]
    Training {
        epoch: usize,
        batch: usize,
        t: Option<usize>,
    },

    /// A metric is undefined for the given inputs (e.g. both volumes empty).
    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: &'static str,
    },

    /// Shape generation produced a degenerate result.
    #[error("generation failed: {0}")]
    Generation(String),

    /// Malformed on-disk data.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}
