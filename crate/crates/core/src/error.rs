//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised while reading or validating trace files.
#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: u64, msg: String },
    #[error("{file}:{line}: arrival references unknown function id `{id}`")]
    UnknownFunction { file: String, line: u64, id: String },
    #[error("function `{id}`: {msg}")]
    InvalidSpec { id: String, msg: String },
}

/// Errors raised by invalid configuration values.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("ids-per-epoch band [{min}, {max}] is infeasible for {n} function ids")]
    BandInfeasible { min: usize, max: usize, n: usize },
    #[error("invalid config field `{field}`: {msg}")]
    InvalidField { field: String, msg: String },
    #[error("normalization component `{axis}` must be > 0 (got {value})")]
    NonPositiveNorm { axis: &'static str, value: f64 },
    #[error("environment schedule has {have} entries but the trace has {need} epochs")]
    EnvScheduleTooShort { have: usize, need: usize },
    #[error("trace has no epochs")]
    EmptyTrace,
}

impl ConfigError {
    pub fn field(field: &str, msg: impl Into<String>) -> Self {
        ConfigError::InvalidField {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

/// The cluster cannot host the demanded containers.
#[derive(Debug, Error)]
#[error("no node can host a container of function `{function}`")]
pub struct CapacityError {
    pub function: String,
}

/// Errors raised when evaluating a plan.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("plan is infeasible: {0}")]
    Infeasible(String),
}
