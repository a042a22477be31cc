//! Command-line driver for the zslc toolkit.
//!
//! Each subcommand of the `zslc` binary is a function in [`commands`]
//! taking a resolved [`config::RunConfig`].

pub mod commands;
pub mod config;
pub mod svg;

use std::path::Path;

use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// File system failures, and engine errors that indicate a bug.
    #[error("{0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<zslc::Error> for CliError {
    fn from(e: zslc::Error) -> Self {
        use zslc::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::GraphMismatch(_) | E::Unsupported(_) => CliError::Io(msg),
            E::InvalidArgument(_) => CliError::Config(msg),
            E::NonFinite { .. } | E::Numerical(_) => CliError::Numerical(msg),
            E::Dimension { .. }
            | E::Invariant(_)
            | E::Schema { .. }
            | E::Parse { .. }
            | E::Checkpoint(_) => CliError::Data(msg),
        }
    }
}

/// Reads `ZSLC_THREADS` and sizes the global kernel thread pool.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ZSLC_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config(format!("ZSLC_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("ZSLC_THREADS: {e}")))
}
