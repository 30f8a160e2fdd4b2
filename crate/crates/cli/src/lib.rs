//! Command-line experiment runner: training, analysis, downstream recall,
//! positional-encoding sweeps, manifests and replay.

pub mod commands;
pub mod config;
pub mod golden;
pub mod manifest;
pub mod report;
pub mod svg;

/// Bad invocation or unusable configuration (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub use commands::{replay, run, Command};
pub use config::ExperimentConfig;
pub use manifest::RunManifest;

/// Worker-pool size from `TEMPOPROBE_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, UsageError> {
    match std::env::var("TEMPOPROBE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(UsageError(format!("TEMPOPROBE_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}
