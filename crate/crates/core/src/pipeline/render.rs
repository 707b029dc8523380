use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{PipelineError, Result};
use crate::diffusion::LatentVideo;

/// Fixed linear map from latent channels to RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDecoder {
    weights: Array2<f64>,
}

impl LatentDecoder {
    pub fn from_seed(seed: u64, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            weights: Array2::from_shape_simple_fn((channels, 3), || {
                StandardNormal.sample(&mut rng)
            }),
        }
    }

    /// `weights` is `channels x 3`.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.ncols() != 3 || weights.nrows() == 0 {
            return Err(PipelineError::Config(format!(
                "decoder weights must be channels x 3, got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    pub fn channels(&self) -> usize {
        self.weights.nrows()
    }
}

/// Projects every frame to RGB and stretches each colour channel to
/// `[0, 255]` using its minimum and maximum over the whole video.
/// A channel that is constant across the video renders as mid-gray.
pub fn render_video(video: &LatentVideo, decoder: &LatentDecoder) -> Result<Vec<RgbImage>> {
    let shape = video.shape();
    if shape.channels != decoder.channels() {
        return Err(PipelineError::Config(format!(
            "decoder expects {} channels, latents have {}",
            decoder.channels(),
            shape.channels
        )));
    }
    let pixels = video.frames() * shape.height * shape.width;
    let flat = video
        .data
        .to_shape((pixels, shape.channels))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let rgb = flat.dot(&decoder.weights);

    let ranges: Vec<(f64, f64)> = rgb
        .axis_iter(Axis(1))
        .map(|col| {
            col.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    let to_byte = |v: f64, (lo, hi): (f64, f64)| -> u8 {
        let span = hi - lo;
        if span.is_nan() || span <= 1e-12 * lo.abs().max(hi.abs()) {
            return 128;
        }
        ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
    };

    let per_frame = shape.height * shape.width;
    let frames = (0..video.frames())
        .map(|f| {
            RgbImage::from_fn(shape.width as u32, shape.height as u32, |x, y| {
                let row = rgb.row(f * per_frame + y as usize * shape.width + x as usize);
                Rgb([
                    to_byte(row[0], ranges[0]),
                    to_byte(row[1], ranges[1]),
                    to_byte(row[2], ranges[2]),
                ])
            })
        })
        .collect();
    Ok(frames)
}

/// Renders a single latent frame on its own.
pub fn render_frame(z0: ArrayView3<f64>, decoder: &LatentDecoder) -> Result<RgbImage> {
    let video = LatentVideo {
        data: z0.insert_axis(Axis(0)).to_owned(),
        t: 0,
    };
    Ok(render_video(&video, decoder)?.remove(0))
}
