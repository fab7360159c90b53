//! Experiment runner for `pclab-core`: data generation, training, evaluation,
//! ablations and decision-boundary export, driven by a TOML config.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PCLAB_THREADS";

/// Worker pool sized by [`THREADS_ENV`], or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::ConfigInvalid(format!("{THREADS_ENV}={raw:?} is not a positive integer"))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::ConfigInvalid(format!("thread pool: {e}")))
}
