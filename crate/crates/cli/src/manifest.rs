use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run. `config` is the fully resolved configuration, so
/// feeding the manifest back in reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub mode: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_seconds: f64,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(config: &RunConfig, wall_time_seconds: f64, outputs: Vec<String>) -> Self {
        Self {
            tool: "pfgmm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: pfgmm_core::VERSION.into(),
            mode: config.mode.name().into(),
            seed: config.seed,
            threads: config.threads,
            wall_time_seconds,
            outputs,
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
    }
}
