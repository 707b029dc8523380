use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use framewise_core::attention::AttentionMode;
use framewise_core::director::{
    lift_fps, ChatClient, Director, FramePromptSet, HttpChatClient, MockChatClient,
};
use framewise_core::eval::{
    frame_score, mean_adjacent_l2, temporal_consistency, EmbeddingProvider, MethodSummary,
    SimilarityTable, ToyEmbeddingProvider,
};
use framewise_core::pipeline::{
    generate_video, write_outputs, CacheStats, GeneratedVideo, PromptSource, Section, MANIFEST_NAME,
};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigArgs, RunConfigFile};
use crate::error::CliError;

#[derive(Debug, Clone, Default, Args)]
pub struct ClientArgs {
    /// Use the built-in offline director instead of the chat endpoint
    #[arg(long)]
    pub mock: bool,
}

impl ClientArgs {
    fn client(&self, config: &RunConfigFile) -> Box<dyn ChatClient> {
        if self.mock {
            Box::new(MockChatClient)
        } else {
            Box::new(HttpChatClient::new(&config.director()))
        }
    }
}

#[derive(Debug, Args)]
pub struct DirectArgs {
    /// Abstract user prompt to expand into per-frame prompts
    pub prompt: String,
    /// Write the prompt set here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub client: ClientArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// User prompt handed to the director
    #[arg(conflicts_with_all = ["prompts_file", "replay"])]
    pub prompt: Option<String>,
    /// Prompt set written by `direct` or `lift-fps`; skips the director
    #[arg(long, value_name = "FILE", conflicts_with = "replay")]
    pub prompts_file: Option<PathBuf>,
    /// Re-run from a manifest: its config and prompts, overridden by flags
    #[arg(long, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub client: ClientArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    /// Prompt set to lift
    #[arg(long, value_name = "FILE")]
    pub prompts_file: PathBuf,
    /// Doubling rounds; frames and fps grow by 2^k
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Write the lifted set here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub client: ClientArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Per-frame score table (CSV, one column per method)
    #[arg(
        long,
        value_name = "CSV",
        required_unless_present = "run",
        conflicts_with = "run"
    )]
    pub scores: Option<PathBuf>,
    /// Output directory of a `generate` run to score
    #[arg(long, value_name = "DIR")]
    pub run: Option<PathBuf>,
    /// Also write the score table as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// User prompt handed to the director
    #[arg(conflicts_with = "prompts_file")]
    pub prompt: Option<String>,
    /// Prompt set shared by every mode; skips the director
    #[arg(long, value_name = "FILE")]
    pub prompts_file: Option<PathBuf>,
    /// Attention modes to compare, comma separated
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub modes: Vec<AttentionMode>,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Write per-mode aggregates as JSON
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub client: ClientArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Everything needed to reproduce and audit a `generate` run. File names
/// are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfigFile,
    pub prompts: FramePromptSet,
    pub sections: Vec<Section>,
    pub frames: Vec<String>,
    pub gif: String,
    pub cache: CacheStats,
    pub mean_adjacent_l2: Option<f64>,
    pub temporal_consistency: Option<f64>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::runtime(path.display(), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::runtime("stdout", e))
        }
    }
}

fn to_json(value: &impl Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::runtime("serialization", e))
}

fn read_prompts(path: &Path) -> Result<FramePromptSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::runtime(path.display(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid prompt set {}: {e}", path.display())))
}

fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::runtime(path.display(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid manifest {}: {e}", path.display())))
}

/// Prompts from a file take precedence over the director; their count and
/// frame rate become the run's `frames` and `fps`.
fn gather_prompts(
    prompt: Option<&str>,
    file: Option<&Path>,
    config: &mut RunConfigFile,
    client: &ClientArgs,
) -> Result<FramePromptSet, CliError> {
    let set = match (prompt, file) {
        (_, Some(path)) => read_prompts(path)?,
        (Some(p), None) => {
            config.validate()?;
            let client = client.client(config);
            Director::new(client.as_ref()).direct(p, config.frames, config.fps)?
        }
        (None, None) => return Err(CliError::Usage("give a prompt or --prompts-file".into())),
    };
    config.frames = set.len();
    config.fps = set.fps();
    Ok(set)
}

pub fn direct(args: DirectArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    config.validate()?;
    let client = args.client.client(&config);
    let set = Director::new(client.as_ref()).direct(&args.prompt, config.frames, config.fps)?;
    emit(&to_json(&set)?, args.out.as_deref())
}

pub fn lift(args: LiftArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    config.validate()?;
    let set = read_prompts(&args.prompts_file)?;
    let client = args.client.client(&config);
    let lifted = lift_fps(&set, args.iterations, client.as_ref())?;
    emit(&to_json(&lifted)?, args.out.as_deref())
}

fn run_pipeline(set: &FramePromptSet, config: &RunConfigFile) -> Result<GeneratedVideo, CliError> {
    config.validate()?;
    // The prompts are already fixed, so the director is never consulted.
    Ok(generate_video(
        PromptSource::Prompts(set.clone()),
        &config.pipeline(),
        &MockChatClient,
    )?)
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let (mut config, set) = match &args.replay {
        Some(path) => {
            let manifest = read_manifest(path)?;
            let config = args.config.resolve_over(manifest.config)?;
            (config, Some(manifest.prompts))
        }
        None => (args.config.resolve()?, None),
    };
    let set = match set {
        Some(set) => {
            config.frames = set.len();
            config.fps = set.fps();
            set
        }
        None => gather_prompts(
            args.prompt.as_deref(),
            args.prompts_file.as_deref(),
            &mut config,
            &args.client,
        )?,
    };
    let video = run_pipeline(&set, &config)?;
    let (l2, consistency) = if video.latents.frames() >= 2 {
        (
            Some(mean_adjacent_l2(&video.latents)?),
            Some(temporal_consistency(&video.latents)?),
        )
    } else {
        (None, None)
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        frames: (1..=video.frames.len())
            .map(|i| format!("frame_{i:04}.png"))
            .collect(),
        gif: framewise_core::pipeline::GIF_NAME.into(),
        config,
        prompts: set,
        sections: video.sections.clone(),
        cache: video.cache,
        mean_adjacent_l2: l2,
        temporal_consistency: consistency,
    };
    let files = write_outputs(
        &video.frames,
        manifest.prompts.fps(),
        &manifest,
        &manifest.config.output_dir,
    )?;
    println!("{}", files.manifest.display());
    Ok(())
}

fn load_frames(dir: &Path, manifest: &Manifest) -> Result<Vec<RgbImage>, CliError> {
    manifest
        .frames
        .iter()
        .map(|name| {
            let path = dir.join(name);
            image::open(&path)
                .map(|img| img.into_rgb8())
                .map_err(|e| CliError::runtime(path.display(), e))
        })
        .collect()
}

fn score_frames(
    frames: &[RgbImage],
    prompts: &FramePromptSet,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<f64>, CliError> {
    frames
        .iter()
        .zip(prompts.prompts())
        .map(|(frame, prompt)| Ok(frame_score(frame, prompt, provider)?))
        .collect()
}

#[derive(Debug, Serialize)]
struct EvalReport {
    frames: usize,
    methods: Vec<MethodSummary>,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let table = if let Some(path) = &args.scores {
        let file = fs::File::open(path).map_err(|e| CliError::runtime(path.display(), e))?;
        SimilarityTable::read_csv(file)?
    } else {
        let dir = args.run.as_deref().expect("clap enforces one input");
        let manifest = read_manifest(&dir.join(MANIFEST_NAME))?;
        let frames = load_frames(dir, &manifest)?;
        let provider = ToyEmbeddingProvider::new(manifest.config.model_seed);
        let scores = score_frames(&frames, &manifest.prompts, &provider)?;
        SimilarityTable::new(vec![(manifest.config.mode.to_string(), scores)])?
    };
    if let Some(path) = &args.csv {
        let file = fs::File::create(path).map_err(|e| CliError::runtime(path.display(), e))?;
        table.write_csv(file)?;
    }
    let report = EvalReport {
        frames: table.frames(),
        methods: table.summary()?,
    };
    emit(&to_json(&report)?, None)
}

pub fn compare_attention(args: CompareArgs) -> Result<(), CliError> {
    let mut config = args.config.resolve()?;
    let set = gather_prompts(
        args.prompt.as_deref(),
        args.prompts_file.as_deref(),
        &mut config,
        &args.client,
    )?;
    let provider = ToyEmbeddingProvider::new(config.model_seed);
    let mut columns = Vec::with_capacity(args.modes.len());
    for &mode in &args.modes {
        let run = RunConfigFile {
            mode,
            ..config.clone()
        };
        let video = run_pipeline(&set, &run)?;
        columns.push((
            mode.to_string(),
            score_frames(&video.frames, &set, &provider)?,
        ));
    }
    let table = SimilarityTable::new(columns)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    emit(&String::from_utf8_lossy(&csv), args.out.as_deref())?;
    if let Some(path) = &args.summary {
        emit(&to_json(&table.summary()?)?, Some(path))?;
    }
    Ok(())
}
