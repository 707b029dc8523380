use framewise_core::director::{ChatError, DirectorError};
use framewise_core::eval::EvalError;
use framewise_core::pipeline::PipelineError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_NETWORK: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Network(_) => EXIT_NETWORK,
        }
    }

    pub fn runtime(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {err}"))
    }
}

fn is_network(err: &ChatError) -> bool {
    matches!(
        err,
        ChatError::Timeout(_)
            | ChatError::Status { .. }
            | ChatError::Transport(_)
            | ChatError::RetriesExhausted { .. }
    )
}

fn director_kind(err: &DirectorError) -> fn(String) -> CliError {
    match err {
        DirectorError::InvalidConfig(_) | DirectorError::EmptyPrompt => CliError::Usage,
        DirectorError::Chat(chat) if is_network(chat) => CliError::Network,
        DirectorError::Lift { source, .. } => director_kind(source),
        _ => CliError::Runtime,
    }
}

impl From<DirectorError> for CliError {
    fn from(err: DirectorError) -> Self {
        director_kind(&err)(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Config(msg) => CliError::Usage(msg),
            PipelineError::Director(e) => e.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn network_failures_map_to_their_own_code() {
        let timeout: CliError =
            DirectorError::Chat(ChatError::Timeout(Duration::from_secs(1))).into();
        assert_eq!(timeout.exit_code(), EXIT_NETWORK);
        let lifted: CliError = DirectorError::Lift {
            iteration: 2,
            source: Box::new(DirectorError::Chat(ChatError::Transport("reset".into()))),
        }
        .into();
        assert_eq!(lifted.exit_code(), EXIT_NETWORK);
        let parse: CliError = DirectorError::Format("no frames".into()).into();
        assert_eq!(parse.exit_code(), EXIT_RUNTIME);
        let usage: CliError = DirectorError::EmptyPrompt.into();
        assert_eq!(usage.exit_code(), EXIT_USAGE);
    }
}
