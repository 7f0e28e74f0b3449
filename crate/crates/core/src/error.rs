use thiserror::Error;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("non-radial topology: cycle through buses {}", .cycle.join(" -> "))]
    Cycle { cycle: Vec<String> },

    #[error("dangling reference: {kind} `{id}` does not exist")]
    DanglingReference { kind: &'static str, id: String },

    #[error("bus `{0}` is not reachable from the source")]
    Unreachable(String),

    #[error("power flow did not converge after {iterations} iterations (worst mismatch {worst_mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, worst_mismatch: f64 },

    #[error("numerical overflow in power flow: {0}")]
    Overflow(String),

    #[error("sensitivity solve failed when perturbing node {node}: {source}")]
    Perturbation {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid sensitivity: {0}")]
    InvalidSensitivity(String),

    #[error("zone {zone} has no usable critical node")]
    Unmonitorable { zone: String },

    #[error("missing voltage record for node {node} in run {run}")]
    MissingRecord { node: String, run: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stale input: {0}")]
    Stale(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("simulation aborted at t = {time_s} s ({state}): {source}")]
    Aborted {
        time_s: u64,
        state: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::NonConvergence { .. }
            | Error::Overflow(_)
            | Error::Perturbation { .. }
            | Error::InvalidSensitivity(_) => ErrorClass::Numerical,
            Error::Aborted { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
