//! Batch front end: configuration, simulation studies, fits on user data,
//! benchmark tables and figures, and run manifests.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod run;
pub mod svg;

pub use cli::Cli;
pub use config::{Mode, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::Manifest;
pub use run::{run, RunOutcome};

/// Parses flags, resolves the configuration and runs it.
pub fn execute(cli: &Cli) -> CliResult<RunOutcome> {
    let env = std::env::var("PFGMM_THREADS").ok();
    let cfg = cli.to_config()?.resolve(env.as_deref())?;
    run(&cfg)
}
