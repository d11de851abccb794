use thiserror::Error;

/// Errors produced by the planner, solvers and document loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A document failed to parse or validate. `field` names the offending entry.
    #[error("invalid document field `{field}`: {message}")]
    Schema { field: String, message: String },

    /// The instance is too large for exhaustive enumeration or otherwise unsolvable.
    #[error("infeasible instance: {0}")]
    Infeasible(String),

    /// The planner cannot produce a plan from the given state.
    #[error("refusing to plan: {0}")]
    RefuseToPlan(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
