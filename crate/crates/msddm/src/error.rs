use thiserror::Error;

/// Errors produced by the analytic and simulation routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested quantity is undefined for these inputs (for example a
    /// conditional mean for a boundary that carries no probability mass).
    #[error("undefined quantity: {0}")]
    Undefined(String),

    /// The model absorbs all probability mass instantaneously.
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    /// An internal consistency check failed (quadrature mass out of range,
    /// series not converging, ...). These indicate a bug or an unusable
    /// parameter regime rather than user error.
    #[error("internal consistency violation: {0}")]
    Inconsistent(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
