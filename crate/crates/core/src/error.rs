use thiserror::Error;

/// Failure modes shared by every module of the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A function was evaluated outside the domain where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The disorder tensor would not fit in the configured entry budget.
    #[error("disorder tensor needs {entries} entries but the budget is {budget}; use a smaller N or p")]
    ResourceLimit { entries: u128, budget: u128 },

    /// An iterative numerical routine did not reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A disorder file or report could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for this error: 2 for validation problems, 3 for
    /// numerical failures and everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::ResourceLimit { .. } | Error::Format(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
