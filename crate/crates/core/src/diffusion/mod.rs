//! Miniature latent diffusion.
//!
//! The pieces mirror a text-to-image latent diffusion model at toy scale: a
//! linear-beta [`NoiseSchedule`], the closed-form forward process, a
//! deterministic one-step reverse update, classifier-free guidance, and a
//! two-block transformer ([`DenoiserParams::predict`]) whose self-attention layers use the
//! cross-frame modes from [`crate::attention`].

mod denoiser;
mod motion;
mod sampler;
mod schedule;
mod text;
mod video;

use ndarray::Array4;
use thiserror::Error;

use crate::attention::AttentionError;

pub use denoiser::{
    toy_denoiser, DenoiserDims, DenoiserInput, DenoiserOutput, DenoiserParams, LayerKv,
    ATTENTION_LAYERS,
};
pub use motion::motion_shift;
pub use sampler::{cfg_combine, ddim_step, forward_marginal, forward_noise_step};
pub use schedule::NoiseSchedule;
pub use text::{embed_text, TextEmbedding, NULL_PROMPT, TEXT_DIM};
pub use video::{
    denoise_section, denoise_video, initial_noise, Branch, KvKey, KvStore, LatentShape,
    SamplerConfig, SectionRequest,
};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("beta {0} must lie strictly between 0 and 1")]
    Beta(f64),
    #[error("cumulative alpha {0} must lie in (0, 1]")]
    AlphaBar(f64),
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error("cannot step from t={t} to t={t_prev} with {steps} steps")]
    Timestep {
        t: usize,
        t_prev: usize,
        steps: usize,
    },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("motion shift ({dx}, {dy}) exceeds the {width}x{height} latent grid")]
    MotionOutOfBounds {
        dx: i64,
        dy: i64,
        width: usize,
        height: usize,
    },
    #[error("mapping steps ({mapping}) exceed total steps ({steps})")]
    MappingSteps { mapping: usize, steps: usize },
    #[error("no frames to sample")]
    NoFrames,
    #[error("attention cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Latents for every frame, `frames x height x width x channels`, at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub data: Array4<f64>,
    pub t: usize,
}

impl LatentVideo {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn shape(&self) -> LatentShape {
        let s = self.data.shape();
        LatentShape {
            height: s[1],
            width: s[2],
            channels: s[3],
        }
    }
}
