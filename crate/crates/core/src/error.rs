use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("delayed time {time} for delay {delay} lies outside the history span [{start}, {end}]")]
    HistoryUnderflow {
        delay: usize,
        time: f64,
        start: f64,
        end: f64,
    },

    #[error("model domain violated: {0}")]
    Domain(String),

    #[error("non-finite model output at {context}: point {point:?}")]
    Evaluation { context: String, point: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("steady-state residual {residual:e} exceeds tolerance {tol:e} (component {component})")]
    NotSteady {
        residual: f64,
        tol: f64,
        component: usize,
    },

    #[error("degenerate pencil: mass matrix condition estimate {condition:e} (some roots at infinity)")]
    DegeneratePencil { condition: f64 },

    #[error("Newton iteration failed at t = {time}: {reason}")]
    StepFailure { time: f64, reason: String },

    #[error("unknown output `{name}`; available: {available}")]
    UnknownOutput { name: String, available: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
