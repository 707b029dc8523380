use ndarray::{Array2, Array3, Array4, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    cfg_combine, ddim_step, embed_text, motion_shift, DenoiserInput, DenoiserParams,
    DiffusionError, LatentVideo, LayerKv, NoiseSchedule, Result, TextEmbedding, ATTENTION_LAYERS,
    NULL_PROMPT,
};
use crate::attention::{AttentionMode, CrossFrameConfig};
use crate::director::FramePromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for LatentShape {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 4,
        }
    }
}

/// Sampling settings shared by every frame of a video. The total number of
/// steps comes from the [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Steps (counted at the end of sampling) during which value mapping is
    /// active; the earlier steps are warm-up.
    pub mapping_steps: usize,
    pub guidance: f64,
    pub attention: CrossFrameConfig,
    pub seed: u64,
    pub latent: LatentShape,
    /// Per-frame latent translation applied once when warm-up ends.
    pub motion: Option<(i32, i32)>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mapping_steps: 96,
            guidance: 12.0,
            attention: CrossFrameConfig::default(),
            seed: 0,
            latent: LatentShape::default(),
            motion: None,
        }
    }
}

/// Which classifier-free guidance branch a denoiser call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Unconditional,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KvKey {
    pub layer: usize,
    pub timestep: usize,
    /// Global 0-based frame index.
    pub frame: usize,
    pub branch: Branch,
}

/// Storage for self-attention keys and values of already generated frames.
pub trait KvStore {
    fn get(&self, key: &KvKey) -> Option<(&Array2<f64>, &Array2<f64>)>;
    fn put(&mut self, key: KvKey, kv: LayerKv) -> std::result::Result<(), String>;
}

/// A batch of frames denoised together, optionally attending to cached
/// frames generated earlier.
#[derive(Debug, Clone)]
pub struct SectionRequest<'a> {
    /// Global 0-based indices of the frames to denoise, in order.
    pub frames: Vec<usize>,
    /// One prompt per entry of `frames`.
    pub prompts: &'a [String],
    /// Cached frames placed ahead of `frames` in the attention context.
    pub cached: Vec<usize>,
    /// Frames (a subset of `frames`) whose keys and values get stored.
    pub record: Vec<usize>,
}

/// Initial Gaussian latent of a frame, drawn from a per-frame stream of the
/// seed so that it does not depend on how many frames are sampled.
pub fn initial_noise(seed: u64, frame: usize, shape: LatentShape) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    Array3::from_shape_simple_fn((shape.height, shape.width, shape.channels), || {
        StandardNormal.sample(&mut rng)
    })
}

/// Samples every frame of `prompts` from pure noise to `t = 0`.
pub fn denoise_video(
    prompts: &FramePromptSet,
    schedule: &NoiseSchedule,
    params: &DenoiserParams,
    config: &SamplerConfig,
) -> Result<LatentVideo> {
    let request = SectionRequest {
        frames: (0..prompts.len()).collect(),
        prompts: prompts.prompts(),
        cached: Vec::new(),
        record: Vec::new(),
    };
    denoise_section(&request, schedule, params, config, None)
}

fn step_attention(
    config: CrossFrameConfig,
    step: usize,
    warmup: usize,
) -> (CrossFrameConfig, Option<usize>) {
    if !config.mode.is_rotational() {
        (config, None)
    } else if step < warmup {
        (config.with_mode(AttentionMode::FirstFrame), None)
    } else {
        (config, Some(step - warmup))
    }
}

fn validate(
    request: &SectionRequest<'_>,
    schedule: &NoiseSchedule,
    params: &DenoiserParams,
    config: &SamplerConfig,
) -> Result<()> {
    if request.frames.is_empty() {
        return Err(DiffusionError::NoFrames);
    }
    if request.prompts.len() != request.frames.len() {
        return Err(DiffusionError::Shape(format!(
            "{} prompts for {} frames",
            request.prompts.len(),
            request.frames.len()
        )));
    }
    if config.mapping_steps > schedule.steps() {
        return Err(DiffusionError::MappingSteps {
            mapping: config.mapping_steps,
            steps: schedule.steps(),
        });
    }
    let shape = config.latent;
    if shape.height < 4 || shape.width < 4 || shape.channels != params.dims().channels {
        return Err(DiffusionError::Shape(format!(
            "latent {shape:?} needs height and width >= 4 and {} channels",
            params.dims().channels
        )));
    }
    if let Some(&f) = request.record.iter().find(|f| !request.frames.contains(f)) {
        return Err(DiffusionError::Cache(format!(
            "frame {f} is recorded but not denoised in this section"
        )));
    }
    config.attention.validate()?;
    Ok(())
}

/// Runs the deterministic reverse process for one section of frames.
///
/// Each step evaluates the denoiser on the unconditional (null prompt) and
/// conditional branches, combines them with classifier-free guidance and
/// takes one deterministic step. Rotational attention modes use first-frame
/// attention during the warm-up steps, then rotate with `t'` counted from
/// the first mapped step. Keys and values of `request.record` frames are
/// written to `store`; cached frames are read from it at the matching
/// `(layer, timestep, branch)`.
pub fn denoise_section(
    request: &SectionRequest<'_>,
    schedule: &NoiseSchedule,
    params: &DenoiserParams,
    config: &SamplerConfig,
    mut store: Option<&mut dyn KvStore>,
) -> Result<LatentVideo> {
    validate(request, schedule, params, config)?;
    if (!request.cached.is_empty() || !request.record.is_empty()) && store.is_none() {
        return Err(DiffusionError::Cache(
            "cached or recorded frames need a store".into(),
        ));
    }

    let steps = schedule.steps();
    let warmup = steps - config.mapping_steps;
    let conditional: Vec<TextEmbedding> = request
        .prompts
        .iter()
        .map(|p| embed_text(p))
        .collect::<Result<_>>()?;
    let unconditional = vec![embed_text(NULL_PROMPT)?; request.frames.len()];
    let mut latents: Vec<Array3<f64>> = request
        .frames
        .iter()
        .map(|&f| initial_noise(config.seed, f, config.latent))
        .collect();
    let capture = !request.record.is_empty();

    let apply_motion = |latents: &mut Vec<Array3<f64>>| -> Result<()> {
        if let Some(delta) = config.motion {
            for (z, &f) in latents.iter_mut().zip(&request.frames) {
                *z = motion_shift(z.view(), f + 1, delta)?;
            }
        }
        Ok(())
    };

    for step in 0..steps {
        if step == warmup {
            apply_motion(&mut latents)?;
        }
        let t = steps - step;
        let alpha_bar = schedule.alpha_bar(t).expect("t within schedule");
        let (attention, t_prime) = step_attention(config.attention, step, warmup);

        let mut branch_eps = Vec::with_capacity(2);
        for (branch, text) in [
            (Branch::Unconditional, &unconditional),
            (Branch::Conditional, &conditional),
        ] {
            let out = {
                let prefix = match store.as_deref() {
                    Some(s) if !request.cached.is_empty() => {
                        cached_context(s, &request.cached, t, branch)?
                    }
                    _ => Vec::new(),
                };
                params.predict(&DenoiserInput {
                    latents: &latents,
                    timestep: t,
                    alpha_bar,
                    text,
                    prefix: &prefix,
                    attention,
                    t_prime,
                    capture,
                })?
            };
            if capture {
                let s = store.as_deref_mut().expect("checked above");
                for (layer, frames) in out.kv.into_iter().enumerate() {
                    for (kv, &frame) in frames.into_iter().zip(&request.frames) {
                        if request.record.contains(&frame) {
                            let key = KvKey {
                                layer,
                                timestep: t,
                                frame,
                                branch,
                            };
                            s.put(key, kv).map_err(DiffusionError::Cache)?;
                        }
                    }
                }
            }
            branch_eps.push(out.eps);
        }

        let conditional_eps = branch_eps.pop().expect("two branches");
        let unconditional_eps = branch_eps.pop().expect("two branches");
        latents = latents
            .iter()
            .zip(unconditional_eps.iter().zip(&conditional_eps))
            .map(|(z, (u, c))| {
                let eps = cfg_combine(u, c, config.guidance)?;
                ddim_step(z, &eps, t, t - 1, schedule)
            })
            .collect::<Result<_>>()?;
    }
    if warmup == steps {
        apply_motion(&mut latents)?;
    }

    let shape = config.latent;
    let mut data = Array4::zeros((latents.len(), shape.height, shape.width, shape.channels));
    for (mut dst, src) in data.outer_iter_mut().zip(&latents) {
        dst.assign(src);
    }
    Ok(LatentVideo { data, t: 0 })
}

type ContextKv<'s> = Vec<Vec<(ArrayView2<'s, f64>, ArrayView2<'s, f64>)>>;

fn cached_context<'s>(
    store: &'s dyn KvStore,
    frames: &[usize],
    timestep: usize,
    branch: Branch,
) -> Result<ContextKv<'s>> {
    (0..ATTENTION_LAYERS)
        .map(|layer| {
            frames
                .iter()
                .map(|&frame| {
                    let key = KvKey {
                        layer,
                        timestep,
                        frame,
                        branch,
                    };
                    store
                        .get(&key)
                        .map(|(k, v)| (k.view(), v.view()))
                        .ok_or_else(|| DiffusionError::Cache(format!("missing entry {key:?}")))
                })
                .collect()
        })
        .collect()
}
