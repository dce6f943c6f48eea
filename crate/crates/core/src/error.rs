use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unsupported derivative order ({0}, {1})")]
    UnsupportedDerivative(usize, usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("GARCH pricing requires rho = 0 on every interval (found {0})")]
    UnsupportedCorrelation(f64),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("operator state: {0}")]
    State(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by the model's own preconditions rather than
    /// malformed input.
    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::UnsupportedCorrelation(_) | Error::ModelMismatch(_))
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::NoSolution(_))
    }
}
