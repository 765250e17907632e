//! Experiment harness: configuration, evaluation against oracles, and CSV output.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod io;

pub use config::{resolve, Experiment, ExperimentConfig, RawConfig};
pub use experiment::{compute, run_experiment, write_outputs, RunOutput};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric abort: {0}")]
    Numeric(#[from] wgf_core::WgfError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numeric aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numeric(_) => 3,
            _ => 1,
        }
    }
}

/// Caps the global rayon pool at `WGF_THREADS` workers when the variable is set.
pub fn init_thread_pool() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var("WGF_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| HarnessError::Config(format!("WGF_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(HarnessError::Config("WGF_THREADS must be positive".into()));
    }
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
