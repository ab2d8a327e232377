//! Batch front end for the `iterlap` binary: benchmark reproduction, the
//! ENSO posterior run and report formatting.

pub mod benchmark;
pub mod cases;
pub mod enso;
pub mod report;

pub use benchmark::{
    build_approximation, run_benchmark, Approximation, BenchmarkReport, BenchmarkSettings, Method, MomentError,
};
pub use cases::{Case, ReferenceMoments};
pub use enso::{run_enso, EnsoReport, EnsoSettings};
pub use report::{emit_report, Format};

/// Errors surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(#[from] iterlap::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// Process exit code: 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
