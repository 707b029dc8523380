use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, DynamicImage, Frame, ImageFormat, RgbImage};
use serde::Serialize;

use super::{PipelineError, Result};

pub const GIF_NAME: &str = "video.gif";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputFiles {
    pub frames: Vec<PathBuf>,
    pub gif: PathBuf,
    pub manifest: PathBuf,
}

/// GIF frame delay for `fps`, `round(100 / fps)` hundredths of a second.
pub fn gif_delay_centis(fps: u32) -> u32 {
    let fps = fps.max(1);
    (200 + fps) / (2 * fps)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `frame_0001.png`, ... plus an animated GIF and the run manifest
/// into `dir`, creating it if needed.
pub fn write_outputs(
    frames: &[RgbImage],
    fps: u32,
    manifest: &impl Serialize,
    dir: &Path,
) -> Result<OutputFiles> {
    let Some(first) = frames.first() else {
        return Err(PipelineError::Config("no frames to write".into()));
    };
    if frames.iter().any(|f| f.dimensions() != first.dimensions()) {
        return Err(PipelineError::Config("frames differ in size".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut paths = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{:04}.png", i + 1));
        frame.save_with_format(&path, ImageFormat::Png)?;
        paths.push(path);
    }

    let gif = dir.join(GIF_NAME);
    {
        let file = File::create(&gif).map_err(io_err(&gif))?;
        let mut encoder = GifEncoder::new(BufWriter::new(file));
        encoder.set_repeat(Repeat::Infinite)?;
        let delay = Delay::from_numer_denom_ms(gif_delay_centis(fps) * 10, 1);
        encoder.encode_frames(frames.iter().map(|f| {
            Frame::from_parts(DynamicImage::ImageRgb8(f.clone()).into_rgba8(), 0, 0, delay)
        }))?;
    }

    let manifest_path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    Ok(OutputFiles {
        frames: paths,
        gif,
        manifest: manifest_path,
    })
}
