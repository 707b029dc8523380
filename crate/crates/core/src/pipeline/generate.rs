use std::path::PathBuf;

use image::RgbImage;
use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use super::{
    plan_sections, render_video, AttentionCache, CacheStats, LatentDecoder, PipelineError, Result,
    Section,
};
use crate::attention::CrossFrameConfig;
use crate::diffusion::{
    denoise_section, DenoiserDims, DenoiserParams, LatentShape, LatentVideo, NoiseSchedule,
    SamplerConfig, SectionRequest,
};
use crate::director::{ChatClient, Director, FramePromptSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Total reverse steps `T`.
    pub steps: usize,
    /// Final steps with value mapping active `T'`.
    pub mapping_steps: usize,
    pub guidance: f64,
    pub attention: CrossFrameConfig,
    /// Frames requested from the director.
    pub frames: usize,
    pub fps: u32,
    /// Frames sampled together; longer videos are split into sections.
    pub batch: usize,
    pub seed: u64,
    /// Seed of the toy denoiser and decoder weights.
    pub model_seed: u64,
    pub model_dim: usize,
    pub latent: LatentShape,
    pub motion: Option<(i32, i32)>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            mapping_steps: 96,
            guidance: 12.0,
            attention: CrossFrameConfig::default(),
            frames: 8,
            fps: 4,
            batch: 8,
            seed: 0,
            model_seed: 0,
            model_dim: 16,
            latent: LatentShape::default(),
            motion: None,
            output_dir: PathBuf::from("output"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.mapping_steps > self.steps {
            return bad(format!(
                "mapping steps ({}) exceed total steps ({})",
                self.mapping_steps, self.steps
            ));
        }
        if self.batch < 2 {
            return bad(format!("batch must be at least 2, got {}", self.batch));
        }
        if self.frames == 0 || self.fps == 0 {
            return bad("frames and fps must be at least 1".into());
        }
        if !self.guidance.is_finite() {
            return bad("guidance must be finite".into());
        }
        if self.latent.height < 4 || self.latent.width < 4 || self.latent.channels == 0 {
            return bad(format!(
                "latent grid {:?} is too small (min 4x4x1)",
                self.latent
            ));
        }
        self.attention
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            mapping_steps: self.mapping_steps,
            guidance: self.guidance,
            attention: self.attention,
            seed: self.seed,
            latent: self.latent,
            motion: self.motion,
        }
    }
}

/// Where the per-frame prompts come from.
#[derive(Debug, Clone)]
pub enum PromptSource {
    /// Ask the director to expand this prompt into `config.frames` frames.
    UserPrompt(String),
    /// Use these prompts as they are; their count sets the frame count.
    Prompts(FramePromptSet),
}

#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub prompts: FramePromptSet,
    pub sections: Vec<Section>,
    pub latents: LatentVideo,
    pub frames: Vec<RgbImage>,
    pub cache: CacheStats,
}

/// Directs (if needed), samples and renders a video.
///
/// Videos longer than one batch are sampled section by section. Frames of
/// a section whose keys and values a later section needs are cached at
/// every `(layer, timestep, branch)`; the later section places those frames
/// ahead of its own in the attention context, so the rotating reference
/// ranges over cached and new frames alike. Cached frames are never
/// re-denoised.
pub fn generate_video(
    source: PromptSource,
    config: &PipelineConfig,
    client: &dyn ChatClient,
) -> Result<GeneratedVideo> {
    config.validate()?;
    let prompts = match source {
        PromptSource::Prompts(set) => set,
        PromptSource::UserPrompt(p) => {
            Director::new(client).direct(&p, config.frames, config.fps)?
        }
    };
    let frames = prompts.len();
    let schedule = NoiseSchedule::linear(config.steps)?;
    let params = DenoiserParams::from_seed(
        config.model_seed,
        DenoiserDims::new(config.latent.channels, config.model_dim),
    )?;
    let sampler = config.sampler();
    let sections = plan_sections(frames, config.batch)?;

    let shape = config.latent;
    let mut data = Array4::zeros((frames, shape.height, shape.width, shape.channels));
    let mut cache = AttentionCache::new();
    for (i, section) in sections.iter().enumerate() {
        let next_cached = sections
            .get(i + 1)
            .map(|n| n.cached.clone())
            .unwrap_or(0..0);
        let request = SectionRequest {
            frames: section.frames.clone().collect(),
            prompts: &prompts.prompts()[section.frames.clone()],
            cached: section.cached.clone().collect(),
            record: next_cached
                .clone()
                .filter(|f| section.frames.contains(f))
                .collect(),
        };
        let needs_store = !request.cached.is_empty() || !request.record.is_empty();
        let latents = denoise_section(
            &request,
            &schedule,
            &params,
            &sampler,
            if needs_store { Some(&mut cache) } else { None },
        )?;
        data.slice_mut(s![section.frames.clone(), .., .., ..])
            .assign(&latents.data);
        cache.retain_frames(|f| next_cached.contains(&f));
    }

    let latents = LatentVideo { data, t: 0 };
    let decoder = LatentDecoder::from_seed(config.model_seed, shape.channels);
    let rendered = render_video(&latents, &decoder)?;
    Ok(GeneratedVideo {
        prompts,
        sections,
        latents,
        frames: rendered,
        cache: cache.stats(),
    })
}
