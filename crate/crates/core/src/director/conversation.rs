use super::prompts::{
    build_fps_lift_instruction, build_task_instruction, build_task_instruction_with,
    format_frame_prompts, parse_frame_prompts,
};
use super::{ChatClient, ChatMessage, DirectorError, FramePromptSet, Result};

/// A stateful directing session. Every request and reply is appended to the
/// conversation so follow-ups (like fps lifting) can refer to the previous
/// result.
pub struct Director<'c> {
    client: &'c dyn ChatClient,
    messages: Vec<ChatMessage>,
    current: Option<FramePromptSet>,
}

impl<'c> Director<'c> {
    pub fn new(client: &'c dyn ChatClient) -> Self {
        Self {
            client,
            messages: Vec::new(),
            current: None,
        }
    }

    /// Rebuilds the conversation that would have produced `set`, so it can
    /// be continued.
    pub fn resume(client: &'c dyn ChatClient, set: &FramePromptSet) -> Result<Self> {
        let instruction = build_task_instruction(set.user_prompt(), set.len(), set.fps())?;
        Ok(Self {
            client,
            messages: vec![
                ChatMessage::user(instruction),
                ChatMessage::assistant(format_frame_prompts(set.prompts())),
            ],
            current: Some(set.clone()),
        })
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn current(&self) -> Option<&FramePromptSet> {
        self.current.as_ref()
    }

    /// Asks for `frames` per-frame prompts at `fps` for `user_prompt`.
    pub fn direct(&mut self, user_prompt: &str, frames: usize, fps: u32) -> Result<FramePromptSet> {
        let instruction = build_task_instruction(user_prompt, frames, fps)?;
        self.run_direct(instruction, user_prompt, frames, fps)
    }

    /// [`Director::direct`] with extra attribute-control guideline lines.
    pub fn direct_with(
        &mut self,
        user_prompt: &str,
        frames: usize,
        fps: u32,
        extra: &[String],
    ) -> Result<FramePromptSet> {
        let instruction = build_task_instruction_with(user_prompt, frames, fps, extra)?;
        self.run_direct(instruction, user_prompt, frames, fps)
    }

    fn run_direct(
        &mut self,
        instruction: String,
        user_prompt: &str,
        frames: usize,
        fps: u32,
    ) -> Result<FramePromptSet> {
        let prompts = self.exchange(instruction, frames)?;
        let set = FramePromptSet::new(user_prompt, fps, prompts)?;
        self.current = Some(set.clone());
        Ok(set)
    }

    /// Doubles frame count and frame rate `iterations` times.
    pub fn lift(&mut self, iterations: usize) -> Result<FramePromptSet> {
        let mut set = self
            .current
            .clone()
            .ok_or_else(|| DirectorError::InvalidConfig("nothing to lift yet".into()))?;
        for iteration in 1..=iterations {
            let lifted = (|| {
                let instruction = build_fps_lift_instruction(set.fps(), set.len());
                let prompts = self.exchange(instruction, 2 * set.len())?;
                FramePromptSet::new(set.user_prompt(), 2 * set.fps(), prompts)
            })()
            .map_err(|source| DirectorError::Lift {
                iteration,
                source: Box::new(source),
            })?;
            set = lifted;
            self.current = Some(set.clone());
        }
        Ok(set)
    }

    fn exchange(&mut self, instruction: String, expected: usize) -> Result<Vec<String>> {
        self.messages.push(ChatMessage::user(instruction));
        let reply = match self.client.complete(&self.messages) {
            Ok(reply) => reply,
            Err(e) => {
                self.messages.pop();
                return Err(e.into());
            }
        };
        self.messages.push(ChatMessage::assistant(reply.clone()));
        parse_frame_prompts(&reply, expected)
    }
}

/// Lifts `set` by `iterations` rounds of frame splitting, continuing the
/// conversation that produced it.
pub fn lift_fps(
    set: &FramePromptSet,
    iterations: usize,
    client: &dyn ChatClient,
) -> Result<FramePromptSet> {
    if iterations == 0 {
        return Ok(set.clone());
    }
    Director::resume(client, set)?.lift(iterations)
}
