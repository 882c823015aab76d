use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] excess_bounds::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        use excess_bounds::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::InvalidInput(_) | E::UndefinedDensity { .. } => EXIT_CONFIG,
                E::Infeasible { .. }
                | E::NotConverged { .. }
                | E::SlopeSearch(_)
                | E::Regime(_) => EXIT_INFEASIBLE,
                E::Budget { .. } => EXIT_BUDGET,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
