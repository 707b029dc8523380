//! End-to-end generation: director, sectioned sampling with an attention
//! cache, rendering and artifact output.

mod cache;
mod generate;
mod output;
mod render;
mod sections;

use std::path::PathBuf;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::director::DirectorError;

pub use cache::{AttentionCache, CacheStats};
pub use generate::{generate_video, GeneratedVideo, PipelineConfig, PromptSource};
pub use output::{gif_delay_centis, write_outputs, OutputFiles, GIF_NAME, MANIFEST_NAME};
pub use render::{render_frame, render_video, LatentDecoder};
pub use sections::{plan_sections, Section};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Director(#[from] DirectorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("manifest serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
