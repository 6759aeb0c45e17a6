//! Command implementations behind the `hpred` binary.
//!
//! Each `cmd_*` function is usable as a library call; `main.rs` only parses
//! arguments and maps [`CliError`] onto exit codes.

use std::path::{Path, PathBuf};

use hpred_core::sim::Scenario;

pub mod bench;
pub mod replay;
pub mod run;
pub mod validate;

pub use bench::{cmd_bench, BenchConfig, BenchModes, BenchmarkReport};
pub use replay::{cmd_replay_export, ReplaySummary};
pub use run::{cmd_run, RunSummary};
pub use validate::{cmd_validate, ValidationConfig, ValidationReport};

/// The two-human MPPI scenario used when no scenario file is given.
pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Failed(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] hpred_core::error::SimError),
    #[error(transparent)]
    Predict(#[from] hpred_core::error::PredictError),
    #[error(transparent)]
    Belief(#[from] hpred_core::error::BeliefError),
    #[error(transparent)]
    Model(#[from] hpred_core::error::ModelError),
    #[error(transparent)]
    Grid(#[from] hpred_core::error::GridError),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config { .. } => 2,
            Self::Sim(hpred_core::error::SimError::Config(_)) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }
}

/// Loads a scenario file, or the bundled default when `path` is `None`.
pub fn load_scenario(path: Option<&Path>) -> Result<Scenario, CliError> {
    let (name, text) = match path {
        Some(p) => (
            p.display().to_string(),
            std::fs::read_to_string(p).map_err(|e| CliError::Config {
                path: p.display().to_string(),
                message: e.to_string(),
            })?,
        ),
        None => ("<default scenario>".to_string(), DEFAULT_SCENARIO.to_string()),
    };
    let s = Scenario::from_toml(&text).map_err(|e| CliError::Config {
        path: name.clone(),
        message: e.to_string(),
    })?;
    s.compile().map_err(|e| CliError::Config {
        path: name,
        message: e.to_string(),
    })?;
    Ok(s)
}

/// Reads and parses a TOML config, falling back to defaults without a file.
pub fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Config {
        path: p.display().to_string(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: p.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn create_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    Ok(dir.to_path_buf())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(CliError::io(format!("writing {}", path.display())))
}
