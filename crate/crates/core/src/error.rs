use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Arguments outside the operation's domain (bad positions, broken
    /// chain invariants, mismatched sizes, infeasible parameters).
    #[error("domain error: {0}")]
    Domain(String),
    /// A configured size budget was exceeded.
    #[error("capacity error: {0}")]
    Capacity(String),
    /// A numerical routine failed to meet its tolerance.
    #[error("numerical error: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },
    /// A textual descriptor or script could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
