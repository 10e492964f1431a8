use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the crate.
///
/// Variants are grouped so that the command-line front end can map them onto
/// distinct exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("input error: {0}")]
    Input(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("duplicate observation for unit {unit}, period {period}")]
    DuplicateObservation { unit: String, period: String },
    #[error("non-numeric value {value:?} in column {column} (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("covariate {0} is constant across all observations")]
    ConstantCovariate(String),
    #[error("outcome {y} outside the support of the {family} family")]
    OutOfSupport { family: String, y: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("effect specification mismatch: {0}")]
    EffectSpec(String),
    #[error("unit-period graph is disconnected into {} components: {}", .components.len(), .components.join("; "))]
    Disconnected { components: Vec<String> },
    #[error("subpanel {label} is invalid: {reason}")]
    Subpanel { label: String, reason: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("separation detected: fitted effect for {which} diverges")]
    Separation { which: String },
    #[error("singular information matrix: {0}")]
    Singular(String),
    #[error("no convergence after {iterations} iterations ({what})")]
    NoConvergence { what: String, iterations: usize },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Input(_)
            | Error::Empty(_)
            | Error::DuplicateObservation { .. }
            | Error::NonNumeric { .. }
            | Error::InvalidOption(_)
            | Error::EffectSpec(_) => 2,
            Error::ConstantCovariate(_)
            | Error::OutOfSupport { .. }
            | Error::Disconnected { .. }
            | Error::Subpanel { .. }
            | Error::Validation(_)
            | Error::Singular(_) => 3,
            Error::Separation { .. } | Error::NoConvergence { .. } | Error::Simulation(_) => 4,
            Error::Internal(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
