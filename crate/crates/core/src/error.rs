use thiserror::Error;

/// Errors produced by the planning library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (empty cloud, zero
    /// factor, mismatched lengths, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A requested state violates a model constraint, e.g. a jaw width
    /// outside the gripper limits.
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// The fitting objective is undefined for the given data (empty
    /// correspondence set).
    #[error("undefined objective: {0}")]
    UndefinedObjective(String),

    /// A region of interest contains no usable depth data.
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    /// A descriptor, scene, configuration or ROI file failed to parse or
    /// violated its schema.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
