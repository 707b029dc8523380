//! Frame-level directing.
//!
//! A chat model is asked to expand one abstract user prompt into a numbered
//! list of per-frame image descriptions, and optionally to split every frame
//! in two to double the frame rate. The model sits behind [`ChatClient`];
//! [`HttpChatClient`] talks to an OpenAI-style chat-completions endpoint and
//! [`MockChatClient`] is a deterministic offline stand-in.

mod client;
mod conversation;
mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    chat_complete, ChatClient, ChatError, ChatMessage, HttpChatClient, MockChatClient, Role,
    API_KEY_ENV,
};
pub use conversation::{lift_fps, Director};
pub use prompts::{
    build_fps_lift_instruction, build_task_instruction, build_task_instruction_with,
    format_frame_prompts, parse_frame_prompts,
};

#[derive(Debug, Error)]
pub enum DirectorError {
    #[error("invalid director settings: {0}")]
    InvalidConfig(String),
    #[error("user prompt is empty")]
    EmptyPrompt,
    #[error("unparseable director output: {0}")]
    Format(String),
    #[error("director returned {found} frame prompts, expected {expected}")]
    CountMismatch { found: usize, expected: usize },
    #[error("frame {0} appears more than once")]
    DuplicateFrame(usize),
    #[error("frame numbering has a gap: frame {missing} is missing")]
    NonContiguous { missing: usize },
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("fps lifting iteration {iteration}: {source}")]
    Lift {
        iteration: usize,
        #[source]
        source: Box<DirectorError>,
    },
}

pub type Result<T> = std::result::Result<T, DirectorError>;

/// Connection and request settings for the director.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectorConfig {
    pub frames: usize,
    pub fps: u32,
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
}

impl Default for DirectorConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            fps: 4,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl DirectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(DirectorError::InvalidConfig(
                "frames must be at least 1".into(),
            ));
        }
        if self.fps == 0 {
            return Err(DirectorError::InvalidConfig(
                "fps must be at least 1".into(),
            ));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(DirectorError::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }
}

/// Ordered per-frame prompts plus the frame rate they were written for.
///
/// Serialized as `{"user_prompt": ..., "fps": ..., "prompts": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPromptSet")]
pub struct FramePromptSet {
    user_prompt: String,
    fps: u32,
    prompts: Vec<String>,
}

#[derive(Deserialize)]
struct RawPromptSet {
    user_prompt: String,
    fps: u32,
    prompts: Vec<String>,
}

impl TryFrom<RawPromptSet> for FramePromptSet {
    type Error = DirectorError;

    fn try_from(raw: RawPromptSet) -> Result<Self> {
        FramePromptSet::new(raw.user_prompt, raw.fps, raw.prompts)
    }
}

impl FramePromptSet {
    pub fn new(user_prompt: impl Into<String>, fps: u32, prompts: Vec<String>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(DirectorError::InvalidConfig(
                "a video needs at least one frame".into(),
            ));
        }
        if fps == 0 {
            return Err(DirectorError::InvalidConfig(
                "fps must be at least 1".into(),
            ));
        }
        if let Some(i) = prompts.iter().position(|p| p.trim().is_empty()) {
            return Err(DirectorError::Format(format!(
                "prompt for frame {} is empty",
                i + 1
            )));
        }
        Ok(Self {
            user_prompt: user_prompt.into(),
            fps,
            prompts,
        })
    }

    pub fn user_prompt(&self) -> &str {
        &self.user_prompt
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// The first `frames` prompts as their own set.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        Self::new(
            self.user_prompt.clone(),
            self.fps,
            self.prompts.iter().take(frames).cloned().collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_set_json_shape() {
        let set = FramePromptSet::new("a corgi", 4, vec!["one".into(), "two".into()]).unwrap();
        let json = serde_json::to_value(&set).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"user_prompt": "a corgi", "fps": 4, "prompts": ["one", "two"]})
        );
        let back: FramePromptSet = serde_json::from_value(json).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn prompt_set_rejects_invalid_json() {
        for bad in [
            r#"{"user_prompt": "x", "fps": 4, "prompts": []}"#,
            r#"{"user_prompt": "x", "fps": 0, "prompts": ["a"]}"#,
            r#"{"user_prompt": "x", "fps": 2, "prompts": ["a", "  "]}"#,
        ] {
            assert!(
                serde_json::from_str::<FramePromptSet>(bad).is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(DirectorConfig::default().validate().is_ok());
        for bad in [
            DirectorConfig {
                frames: 0,
                ..Default::default()
            },
            DirectorConfig {
                fps: 0,
                ..Default::default()
            },
            DirectorConfig {
                timeout_secs: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                bad.validate(),
                Err(DirectorError::InvalidConfig(_))
            ));
        }
    }
}
