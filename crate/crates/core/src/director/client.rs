use std::io;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::{format_frame_prompts, parse_frame_prompts};
use super::DirectorConfig;

/// Environment variable holding the bearer token for the chat endpoint.
pub const API_KEY_ENV: &str = "FRAMEWISE_API_KEY";

const MAX_BACKOFF: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("conversation is empty or has an empty message")]
    EmptyConversation,
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint answered with status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ChatError> },
    #[error("mock client cannot answer: {0}")]
    Mock(String),
}

impl ChatError {
    /// Server-side hiccups worth another attempt. Timeouts are not retried: a
    /// slow completion would only be paid for twice.
    pub fn is_transient(&self) -> bool {
        match self {
            ChatError::Status { code, .. } => *code == 429 || *code >= 500,
            ChatError::Transport(_) => true,
            _ => false,
        }
    }
}

/// Anything that can continue a chat conversation.
pub trait ChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

fn check_conversation(messages: &[ChatMessage]) -> Result<(), ChatError> {
    if messages.is_empty() || messages.iter().any(|m| m.content.trim().is_empty()) {
        return Err(ChatError::EmptyConversation);
    }
    Ok(())
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: String,
}

/// Blocking client for an OpenAI-style `POST {endpoint}/chat/completions`.
pub struct HttpChatClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    max_retries: u32,
    backoff: Duration,
}

impl HttpChatClient {
    /// Builds a client, reading the bearer token from [`API_KEY_ENV`] if set.
    pub fn new(config: &DirectorConfig) -> Self {
        Self::with_api_key(
            config,
            std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        )
    }

    pub fn with_api_key(config: &DirectorConfig, api_key: Option<String>) -> Self {
        let timeout = Duration::from_secs_f64(config.timeout_secs.max(1e-3));
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            agent,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            timeout,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
        }
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: &self.model,
            messages,
        };
        let response = match request.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(ChatError::Status { code, body });
            }
            Err(ureq::Error::Transport(t)) => return Err(self.classify_transport(&t)),
        };
        let text = response.into_string().map_err(|e| {
            if is_timeout(&e) {
                ChatError::Timeout(self.timeout)
            } else {
                ChatError::Transport(e.to_string())
            }
        })?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| ChatError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ChatError::MalformedResponse("response has no choices".into()))
    }

    fn classify_transport(&self, t: &ureq::Transport) -> ChatError {
        let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
        while let Some(err) = source {
            if let Some(io) = err.downcast_ref::<io::Error>() {
                if is_timeout(io) {
                    return ChatError::Timeout(self.timeout);
                }
            }
            source = err.source();
        }
        ChatError::Transport(t.to_string())
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
    )
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        check_conversation(messages)?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(messages) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() => {
                    if attempts > self.max_retries {
                        return Err(ChatError::RetriesExhausted {
                            attempts,
                            last: Box::new(e),
                        });
                    }
                    let delay = self.backoff.saturating_mul(1 << (attempts - 1).min(16));
                    thread::sleep(delay.min(MAX_BACKOFF));
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// One-shot completion against the HTTP endpoint in `config`.
pub fn chat_complete(
    messages: &[ChatMessage],
    config: &DirectorConfig,
) -> Result<String, ChatError> {
    HttpChatClient::new(config).complete(messages)
}

/// Offline director whose reply is a pure function of the conversation.
///
/// It answers the task instruction with one line per requested frame built
/// from the user prompt, and answers a lift instruction by splitting every
/// frame of its previous answer into an earlier and a later moment.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockChatClient;

const STAGES: [&str; 8] = [
    "establishing the scene",
    "as the action begins",
    "as the action builds",
    "at the turning point",
    "as events unfold",
    "at the climax",
    "in the aftermath",
    "in the closing moment",
];

const SHOTS: [&str; 4] = ["wide shot", "medium shot", "close-up", "tracking shot"];

impl MockChatClient {
    fn direct(instruction: &str) -> Result<String, ChatError> {
        let frames = instruction
            .lines()
            .find_map(|l| l.strip_prefix("Output format: exactly "))
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| ChatError::Mock("no frame count in instruction".into()))?;
        let start = instruction
            .find("\"\"\"\n")
            .ok_or_else(|| ChatError::Mock("no quoted user prompt".into()))?
            + 4;
        let end = instruction
            .rfind("\n\"\"\"")
            .filter(|&e| e >= start)
            .ok_or_else(|| ChatError::Mock("unterminated user prompt".into()))?;
        let subject = instruction[start..end]
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let subject = subject.trim_end_matches(['.', '!', '?']);
        let prompts: Vec<String> = (0..frames)
            .map(|i| {
                let stage = STAGES[i * STAGES.len() / frames];
                let shot = SHOTS[i % SHOTS.len()];
                format!("{subject}, {stage}, {shot}, frame {} of {frames}", i + 1)
            })
            .collect();
        Ok(format_frame_prompts(&prompts))
    }

    fn split(messages: &[ChatMessage]) -> Result<String, ChatError> {
        let previous = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::Assistant)
            .ok_or_else(|| ChatError::Mock("nothing to divide".into()))?;
        let count = previous
            .content
            .lines()
            .filter(|l| !l.trim().is_empty())
            .count();
        let prompts = parse_frame_prompts(&previous.content, count)
            .map_err(|e| ChatError::Mock(format!("previous answer unreadable: {e}")))?;
        let halves: Vec<String> = prompts
            .iter()
            .flat_map(|p| [format!("{p}, earlier moment"), format!("{p}, later moment")])
            .collect();
        Ok(format_frame_prompts(&halves))
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        check_conversation(messages)?;
        let last = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| ChatError::Mock("no user message".into()))?;
        if last
            .content
            .contains("divide each frame in the previous result")
        {
            Self::split(messages)
        } else if last.content.contains("Output format: exactly ") {
            Self::direct(&last.content)
        } else {
            Err(ChatError::Mock("unrecognized request".into()))
        }
    }
}
