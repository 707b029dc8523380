//! Faithfulness and consistency metrics.
//!
//! Per-frame text-image similarity comes from a pluggable
//! [`EmbeddingProvider`]; [`ToyEmbeddingProvider`] is a deterministic
//! stand-in for a real CLIP-style encoder. Per-frame scores for several
//! attention methods form a [`SimilarityTable`], summarized by the mean
//! score (`Avg.`) and the mean absolute deviation from frame 1
//! (`Avg. Dist.`).

use std::io::{Read, Write};

use image::RgbImage;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{embed_text, LatentVideo, TEXT_DIM};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scores to aggregate")]
    Empty,
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("embeddings differ in length ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("malformed score table: {0}")]
    Table(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Maps images and text into a shared embedding space.
pub trait EmbeddingProvider {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

const GRID: usize = 4;
const IMAGE_FEATURES: usize = GRID * GRID * 3 + 1;

/// Deterministic provider: text goes through the hashed prompt embedding,
/// images through a fixed random projection of their 4x4 mean-colour grid.
#[derive(Debug, Clone)]
pub struct ToyEmbeddingProvider {
    projection: Array2<f64>,
}

impl ToyEmbeddingProvider {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (IMAGE_FEATURES as f64).sqrt()).expect("valid std");
        Self {
            projection: Array2::from_shape_simple_fn((IMAGE_FEATURES, TEXT_DIM), || {
                normal.sample(&mut rng)
            }),
        }
    }
}

impl Default for ToyEmbeddingProvider {
    fn default() -> Self {
        Self::new(0)
    }
}

fn normalized(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 0.0 || norm.is_infinite() {
        return Err(EvalError::Provider("embedding has no direction".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

impl EmbeddingProvider for ToyEmbeddingProvider {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(EvalError::Provider("empty image".into()));
        }
        let mut sums = vec![0.0; GRID * GRID * 3];
        let mut counts = [0usize; GRID * GRID];
        for (x, y, p) in image.enumerate_pixels() {
            let cell = (y as usize * GRID / h as usize) * GRID + x as usize * GRID / w as usize;
            counts[cell] += 1;
            for c in 0..3 {
                sums[cell * 3 + c] += p.0[c] as f64 / 255.0 - 0.5;
            }
        }
        let mut features: Vec<f64> = sums
            .iter()
            .enumerate()
            .map(|(i, s)| s / counts[i / 3].max(1) as f64)
            .collect();
        features.push(1.0);
        let projected = ndarray::Array1::from(features).dot(&self.projection);
        normalized(projected.to_vec())
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        embed_text(text)
            .map(|e| e.as_slice().to_vec())
            .map_err(|e| EvalError::Provider(e.to_string()))
    }
}

/// Cosine similarity between two embeddings.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::Dimension(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::Provider("zero-length embedding".into()));
    }
    Ok(dot / (na * nb))
}

/// Text-image similarity of one rendered frame and its prompt.
pub fn frame_score(
    frame: &RgbImage,
    prompt: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64> {
    cosine(&provider.embed_image(frame)?, &provider.embed_text(prompt)?)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    match scores.iter().find(|s| !s.is_finite()) {
        Some(&s) => Err(EvalError::NonFinite(s)),
        None => Ok(()),
    }
}

/// Mean per-frame score.
pub fn avg_score(scores: &[f64]) -> Result<f64> {
    check_scores(scores)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean absolute difference between frame 1's score and every frame's
/// score. Frame 1's own zero term is part of the mean (divisor `F`).
pub fn avg_dist(scores: &[f64]) -> Result<f64> {
    check_scores(scores)?;
    let first = scores[0];
    Ok(scores.iter().map(|s| (first - s).abs()).sum::<f64>() / scores.len() as f64)
}

fn frame_pair_distances(latents: &LatentVideo) -> Result<Vec<f64>> {
    let frames = latents.frames();
    if frames < 2 {
        return Err(EvalError::TooFewFrames(frames));
    }
    let s = latents.shape();
    let pixels = (s.height * s.width) as f64;
    Ok((1..frames)
        .map(|f| {
            let a = latents.data.index_axis(Axis(0), f - 1);
            let b = latents.data.index_axis(Axis(0), f);
            let diff = &a - &b;
            diff.lanes(Axis(2))
                .into_iter()
                .map(|lane| lane.iter().map(|x| x * x).sum::<f64>().sqrt())
                .sum::<f64>()
                / pixels
        })
        .collect())
}

/// Mean over adjacent frame pairs of the per-pixel L2 distance between
/// their latents.
pub fn mean_adjacent_l2(latents: &LatentVideo) -> Result<f64> {
    let d = frame_pair_distances(latents)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// [`mean_adjacent_l2`] divided by the video's root-mean-square per-pixel
/// latent norm, so it does not change when all latents are scaled together.
/// Zero for a video of identical frames.
pub fn temporal_consistency(latents: &LatentVideo) -> Result<f64> {
    let mean = mean_adjacent_l2(latents)?;
    let s = latents.shape();
    let pixels = (latents.frames() * s.height * s.width) as f64;
    let rms = (latents.data.iter().map(|x| x * x).sum::<f64>() / pixels).sqrt();
    if rms == 0.0 {
        return Ok(0.0);
    }
    Ok(mean / rms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub avg: f64,
    pub avg_dist: f64,
}

/// Per-frame scores of several methods over the same frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    columns: Vec<(String, Vec<f64>)>,
}

pub const AVG_ROW: &str = "Avg.";
pub const AVG_DIST_ROW: &str = "Avg. Dist.";

impl SimilarityTable {
    pub fn new(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let Some((_, first)) = columns.first() else {
            return Err(EvalError::Table("no methods".into()));
        };
        let frames = first.len();
        for (label, scores) in &columns {
            check_scores(scores)?;
            if scores.len() != frames {
                return Err(EvalError::Table(format!(
                    "method `{label}` has {} frames, expected {frames}",
                    scores.len()
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[(String, Vec<f64>)] {
        &self.columns
    }

    pub fn frames(&self) -> usize {
        self.columns[0].1.len()
    }

    pub fn scores(&self, label: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, s)| s.as_slice())
    }

    pub fn summary(&self) -> Result<Vec<MethodSummary>> {
        self.columns
            .iter()
            .map(|(label, scores)| {
                Ok(MethodSummary {
                    label: label.clone(),
                    avg: avg_score(scores)?,
                    avg_dist: avg_dist(scores)?,
                })
            })
            .collect()
    }

    /// CSV with a `frame` column, one row per frame (1-based) and trailing
    /// `Avg.` / `Avg. Dist.` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["frame".to_string()];
        header.extend(self.columns.iter().map(|(l, _)| l.clone()));
        w.write_record(&header)?;
        for f in 0..self.frames() {
            let mut row = vec![(f + 1).to_string()];
            row.extend(self.columns.iter().map(|(_, s)| s[f].to_string()));
            w.write_record(&row)?;
        }
        let summary = self.summary()?;
        let mut avg = vec![AVG_ROW.to_string()];
        avg.extend(summary.iter().map(|m| m.avg.to_string()));
        w.write_record(&avg)?;
        let mut dist = vec![AVG_DIST_ROW.to_string()];
        dist.extend(summary.iter().map(|m| m.avg_dist.to_string()));
        w.write_record(&dist)?;
        w.flush().map_err(|e| EvalError::Csv(e.into()))?;
        Ok(())
    }

    /// Reads a table written by [`SimilarityTable::write_csv`]. Rows whose
    /// first field is not a frame number (such as aggregate rows) are
    /// skipped; frames must be numbered 1, 2, ... in order.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let labels: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        if labels.is_empty() {
            return Err(EvalError::Table("no method columns".into()));
        }
        let mut columns: Vec<(String, Vec<f64>)> =
            labels.into_iter().map(|l| (l, Vec::new())).collect();
        let mut expected_frame = 1;
        for record in r.records() {
            let record = record?;
            let Some(Ok(frame)) = record.get(0).map(str::parse::<usize>) else {
                continue;
            };
            if frame != expected_frame {
                return Err(EvalError::Table(format!(
                    "expected frame {expected_frame}, found {frame}"
                )));
            }
            expected_frame += 1;
            if record.len() != columns.len() + 1 {
                return Err(EvalError::Table(format!(
                    "frame {frame} has {} fields",
                    record.len()
                )));
            }
            for (field, (_, scores)) in record.iter().skip(1).zip(columns.iter_mut()) {
                let v = field.parse::<f64>().map_err(|_| {
                    EvalError::Table(format!("bad score `{field}` in frame {frame}"))
                })?;
                scores.push(v);
            }
        }
        Self::new(columns)
    }
}
