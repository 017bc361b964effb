use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition row ({0}, {1}) does not sum to 1 (sum = {2})")]
    NonStochasticRow(usize, usize, f64),
    #[error("discount {0} outside [0, 1)")]
    BadGamma(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("policy evaluation system is singular")]
    SingularEvaluation,
    #[error("state {0} not covered by the policy table")]
    UnknownState(usize),
    #[error("invalid dispersion: {0}")]
    InvalidDispersion(String),
    #[error("unvisited state-action pairs: {0:?}")]
    UnvisitedPairs(Vec<(usize, usize)>),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("history too short: need more than {0} steps, got {1}")]
    HistoryTooShort(usize, usize),
    #[error("generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("codec base must be at least 2, got {0}")]
    BadBase(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
