//! Scenario files, figure presets and result bundles for the `bisac` CLI.

pub mod presets;
pub mod run;
pub mod scenario;

use thiserror::Error;

pub use run::{run_scenario, run_sweep, RunOutcome};
pub use scenario::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("invalid scenario: {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 2 for infeasible problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Loads a scenario from a file path, or by preset name when no such file
/// exists.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, CliError> {
    let path = std::path::Path::new(name_or_path);
    if path.is_file() {
        return Scenario::load(path);
    }
    presets::preset(name_or_path).ok_or_else(|| CliError::Invalid {
        key: "scenario".into(),
        reason: format!("{name_or_path:?} is neither a file nor a preset ({})", presets::list_presets().join(", ")),
    })
}
