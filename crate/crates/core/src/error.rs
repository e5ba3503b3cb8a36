use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("Lagrangian is not regular at {point:?}: |det| = {det:e}, threshold {threshold:e}")]
    Singular { point: Vec<f64>, det: f64, threshold: f64 },
    #[error("metric is not positive definite: {0}")]
    NotPositive(String),
    #[error("scenario error at `{path}`: {message}")]
    Scenario { path: String, message: String },
    #[error("flow is unstable: {0}")]
    Unstable(String),
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::Invalid(_) => "invalid",
            Error::Singular { .. } => "singular",
            Error::NotPositive(_) => "not_positive",
            Error::Scenario { .. } => "scenario",
            Error::Unstable(_) => "unstable",
            Error::Invariant(_) => "invariant",
            Error::Io(_) => "io",
        }
    }
}
