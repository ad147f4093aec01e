//! Config-driven pipeline behind the `ghr` executable.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{Pipeline, STAGES};

use ghr_core::GhrError;

/// Process exit status for an error.
pub fn exit_code(e: &GhrError) -> i32 {
    match e {
        GhrError::Config(_) => 2,
        GhrError::MissingArtifact { .. } => 3,
        GhrError::NonFinite { .. } => 4,
        _ => 1,
    }
}
