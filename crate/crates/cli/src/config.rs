use std::path::{Path, PathBuf};

use clap::Args;
use framewise_core::attention::{AttentionMode, CrossFrameConfig};
use framewise_core::diffusion::LatentShape;
use framewise_core::director::DirectorConfig;
use framewise_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every tunable of a run as one flat JSON object. Missing keys take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub steps: usize,
    pub mapping_steps: usize,
    pub guidance: f64,
    pub mode: AttentionMode,
    pub period: usize,
    pub quantile: f64,
    pub scale_dual_softmax: bool,
    pub frames: usize,
    pub fps: u32,
    pub batch: usize,
    pub seed: u64,
    pub model_seed: u64,
    pub model_dim: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub latent_channels: usize,
    pub motion_dx: Option<i32>,
    pub motion_dy: Option<i32>,
    pub output_dir: PathBuf,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let director = DirectorConfig::default();
        Self {
            steps: pipeline.steps,
            mapping_steps: pipeline.mapping_steps,
            guidance: pipeline.guidance,
            mode: pipeline.attention.mode,
            period: pipeline.attention.period,
            quantile: pipeline.attention.quantile,
            scale_dual_softmax: pipeline.attention.scale_dual_softmax,
            frames: director.frames,
            fps: director.fps,
            batch: pipeline.batch,
            seed: pipeline.seed,
            model_seed: pipeline.model_seed,
            model_dim: pipeline.model_dim,
            latent_height: pipeline.latent.height,
            latent_width: pipeline.latent.width,
            latent_channels: pipeline.latent.channels,
            motion_dx: None,
            motion_dy: None,
            output_dir: pipeline.output_dir,
            endpoint: director.endpoint,
            model: director.model,
            timeout_secs: director.timeout_secs,
            max_retries: director.max_retries,
            backoff_ms: director.backoff_ms,
        }
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let motion = match (self.motion_dx, self.motion_dy) {
            (None, None) => None,
            (dx, dy) => Some((dx.unwrap_or(0), dy.unwrap_or(0))),
        };
        PipelineConfig {
            steps: self.steps,
            mapping_steps: self.mapping_steps,
            guidance: self.guidance,
            attention: CrossFrameConfig {
                mode: self.mode,
                period: self.period,
                quantile: self.quantile,
                scale_dual_softmax: self.scale_dual_softmax,
            },
            frames: self.frames,
            fps: self.fps,
            batch: self.batch,
            seed: self.seed,
            model_seed: self.model_seed,
            model_dim: self.model_dim,
            latent: LatentShape {
                height: self.latent_height,
                width: self.latent_width,
                channels: self.latent_channels,
            },
            motion,
            output_dir: self.output_dir.clone(),
        }
    }

    pub fn director(&self) -> DirectorConfig {
        DirectorConfig {
            frames: self.frames,
            fps: self.fps,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.director()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.pipeline()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Command-line mirror of [`RunConfigFile`]: one flag per key. Flags win
/// over the `--config` file, which wins over the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run-config file; flags given on the command line override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Total reverse diffusion steps T [default: 100]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Final steps with value mapping active, T' [default: 96]
    #[arg(long)]
    pub mapping_steps: Option<usize>,
    /// Classifier-free guidance scale s [default: 12]
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Attention mode: per_frame, first_frame, sparse_causal, rvm, rvm_dsf [default: rvm_dsf]
    #[arg(long)]
    pub mode: Option<AttentionMode>,
    /// Steps between reference-frame rotations, m [default: 4]
    #[arg(long)]
    pub period: Option<usize>,
    /// Dual-softmax confidence quantile q [default: 0.4]
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Scale logits by 1/sqrt(d) before the dual softmax [default: true]
    #[arg(long, value_name = "BOOL")]
    pub scale_dual_softmax: Option<bool>,
    /// Frames requested from the director, F [default: 8]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame rate of the prompts and the GIF [default: 4]
    #[arg(long)]
    pub fps: Option<u32>,
    /// Frames sampled together, B [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seed of the initial latent noise [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the denoiser, decoder and scoring weights [default: 0]
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Hidden width of the denoiser, a multiple of 4 [default: 16]
    #[arg(long)]
    pub model_dim: Option<usize>,
    /// Latent grid height [default: 16]
    #[arg(long)]
    pub latent_height: Option<usize>,
    /// Latent grid width [default: 16]
    #[arg(long)]
    pub latent_width: Option<usize>,
    /// Latent channels [default: 4]
    #[arg(long)]
    pub latent_channels: Option<usize>,
    /// Horizontal latent shift per frame during warm-up [default: none]
    #[arg(long, allow_hyphen_values = true)]
    pub motion_dx: Option<i32>,
    /// Vertical latent shift per frame during warm-up [default: none]
    #[arg(long, allow_hyphen_values = true)]
    pub motion_dy: Option<i32>,
    /// Directory for frames, GIF and manifest [default: output]
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Chat-completions base URL [default: https://api.openai.com/v1]
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Chat model name [default: gpt-4]
    #[arg(long)]
    pub model: Option<String>,
    /// Per-request timeout in seconds [default: 60]
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    /// Retries after a 5xx, 429 or connection failure [default: 3]
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// First retry delay in milliseconds, doubled per retry [default: 500]
    #[arg(long)]
    pub backoff_ms: Option<u64>,
}

impl ConfigArgs {
    /// Layers the config file (if any) and then the flags over `base`.
    pub fn resolve_over(&self, base: RunConfigFile) -> Result<RunConfigFile, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfigFile::load(path)?,
            None => base,
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        apply!(
            steps,
            mapping_steps,
            guidance,
            mode,
            period,
            quantile,
            scale_dual_softmax,
            frames,
            fps,
            batch,
            seed,
            model_seed,
            model_dim,
            latent_height,
            latent_width,
            latent_channels,
            output_dir,
            endpoint,
            model,
            timeout_secs,
            max_retries,
            backoff_ms
        );
        if self.motion_dx.is_some() {
            c.motion_dx = self.motion_dx;
        }
        if self.motion_dy.is_some() {
            c.motion_dy = self.motion_dy;
        }
        Ok(c)
    }

    pub fn resolve(&self) -> Result<RunConfigFile, CliError> {
        self.resolve_over(RunConfigFile::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults() {
        let c = RunConfigFile::default();
        assert_eq!(
            (c.steps, c.mapping_steps, c.period, c.batch),
            (100, 96, 4, 8)
        );
        assert_eq!((c.guidance, c.quantile), (12.0, 0.4));
        assert_eq!(c.mode, AttentionMode::RvmDsf);
    }

    #[test]
    fn partial_file_fills_defaults_and_unknown_keys_fail() {
        let c: RunConfigFile = serde_json::from_str(r#"{"steps": 20, "mode": "rvm"}"#).unwrap();
        assert_eq!(c.steps, 20);
        assert_eq!(c.mode, AttentionMode::Rvm);
        assert_eq!(c.mapping_steps, 96);
        assert!(serde_json::from_str::<RunConfigFile>(r#"{"stepz": 20}"#).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"steps": 20, "seed": 5}"#).unwrap();
        let args = ConfigArgs {
            config: Some(path),
            seed: Some(9),
            motion_dx: Some(-1),
            ..ConfigArgs::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!((c.steps, c.seed), (20, 9));
        assert_eq!(c.pipeline().motion, Some((-1, 0)));
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfigFile {
            motion_dy: Some(2),
            ..RunConfigFile::default()
        };
        let back: RunConfigFile =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
