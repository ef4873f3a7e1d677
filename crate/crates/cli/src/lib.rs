//! Orchestration for clarification studies: configuration, the runnable
//! commands, and the artifact directories they write.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod report;
pub mod runtime;

pub use commands::{
    cmd_convert, cmd_generate_clarifications, cmd_report, cmd_responsiveness, cmd_when_to_clarify, RunArtifact,
};
pub use config::{BackendSpec, ConfigFile, Overrides, RunConfig};
pub use error::CliError;
