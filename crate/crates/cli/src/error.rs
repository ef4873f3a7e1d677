use thiserror::Error;

use clarify_core::estimators::EstimatorError;
use clarify_core::gateway::GatewayError;
use clarify_core::prompting::PromptError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("artifact written by clarify {found}, newer than this build ({current})")]
    VersionMismatch { found: String, current: String },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Transport(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Per-example failures become records; only transport exhaustion aborts.
pub(crate) fn is_transport_gateway(e: &GatewayError) -> bool {
    match e {
        GatewayError::PartialFailure { message, .. } => message.starts_with("transport failure"),
        other => other.is_transport(),
    }
}

pub(crate) fn is_transport_prompt(e: &PromptError) -> bool {
    matches!(e, PromptError::Gateway(g) if is_transport_gateway(g))
}

pub(crate) fn is_transport_estimator(e: &EstimatorError) -> bool {
    match e {
        EstimatorError::Gateway(g) => is_transport_gateway(g),
        EstimatorError::Prompt(p) => is_transport_prompt(p),
        _ => false,
    }
}
