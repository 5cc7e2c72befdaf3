//! Config-driven experiment runner: data synthesis, splitting, training,
//! generation, evaluation, sweeps and curve tables.

pub mod commands;
pub mod config;
mod fsutil;

pub use config::{Cell, CellKind, ExperimentConfig, SweepConfig, SweepParam};
pub use fsutil::write_atomic;

pub const ENV_OUTPUT_DIR: &str = "POPSYNTH_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "POPSYNTH_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("missing input {path}: {hint}")]
    Missing { path: String, hint: String },

    #[error("{0}")]
    Core(#[from] popsynth::Error),

    #[error("{failed} of {total} cells failed: {details}")]
    Cells {
        failed: usize,
        total: usize,
        details: String,
    },
}

impl CliError {
    /// Stable machine-readable kind for the error JSON.
    pub fn kind(&self) -> &'static str {
        use popsynth::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Missing { .. } => "missing_input",
            CliError::Cells { .. } => "cell_failures",
            CliError::Core(e) => match e {
                E::Io(_) => "io",
                E::Json(_) | E::Csv(_) => "parse",
                E::Diverged { .. } => "diverged",
                E::Unsatisfiable { .. } => "unsatisfiable",
                E::Schema(_) | E::Record(_) | E::PopulationSpec(_) => "data",
                _ => "invalid_argument",
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
