use std::fmt;

use serde::Serialize;

/// One violated constraint, tied to the configuration field that caused it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid problem: {}", join(.0))]
    InvalidProblem(Vec<FieldError>),

    #[error("{0}")]
    Unsupported(String),

    #[error("CFL limit exceeded: {requested} time steps requested, at least {required} required")]
    Cfl { requested: usize, required: usize },

    #[error("solver diverged at time slice {slice} (t = {time})")]
    Divergence { slice: usize, time: f64 },

    #[error("ODE integration failed at t = {time}")]
    IntegrationFailure { time: f64 },

    #[error("policy queried outside its table: R = {r}, t = {t}")]
    PolicyDomain { r: f64, t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}
