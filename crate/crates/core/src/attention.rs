//! Cross-frame self-attention.
//!
//! Every frame of a video is processed by the same self-attention layer. The
//! modes here differ only in *which* frame supplies the keys and values a
//! given frame's queries attend to:
//!
//! * `per_frame`: each frame attends to itself (independent images).
//! * `first_frame`: every frame attends to frame 1.
//! * `sparse_causal`: frame f attends to frames 1 and f-1 concatenated.
//! * `rvm`: every frame attends to a reference frame that rotates through
//!   the video every `period` steps (rotational value mapping).
//! * `rvm_dsf`: rotational value mapping, but tokens whose dual-softmax
//!   matching confidence falls at or below a quantile keep their own frame's
//!   attention output.
//!
//! All functions are pure and operate on `f64` row-major matrices with one
//! token per row.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rotation period must be at least 1")]
    ZeroPeriod,
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error("quantile {0} is outside [0, 1]")]
    Quantile(f64),
    #[error("mask has {found} entries, expected {expected}")]
    MaskLength { found: usize, expected: usize },
    #[error("mode {0} needs the number of steps since value mapping started")]
    MissingMappingStep(AttentionMode),
    #[error("frame {frame} out of range for {frames} frames")]
    FrameIndex { frame: usize, frames: usize },
}

pub type Result<T> = std::result::Result<T, AttentionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    PerFrame,
    FirstFrame,
    SparseCausal,
    Rvm,
    RvmDsf,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 5] = [
        AttentionMode::PerFrame,
        AttentionMode::FirstFrame,
        AttentionMode::SparseCausal,
        AttentionMode::Rvm,
        AttentionMode::RvmDsf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::PerFrame => "per_frame",
            AttentionMode::FirstFrame => "first_frame",
            AttentionMode::SparseCausal => "sparse_causal",
            AttentionMode::Rvm => "rvm",
            AttentionMode::RvmDsf => "rvm_dsf",
        }
    }

    /// Modes that rotate the reference frame and therefore need `t'`.
    pub fn is_rotational(self) -> bool {
        matches!(self, AttentionMode::Rvm | AttentionMode::RvmDsf)
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        AttentionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == normalized)
            .ok_or_else(|| {
                format!(
                    "unknown attention mode `{s}` (expected one of per_frame, first_frame, sparse_causal, rvm, rvm_dsf)"
                )
            })
    }
}

/// Settings for the augmented self-attention layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossFrameConfig {
    pub mode: AttentionMode,
    /// Number of steps each reference frame is held for under rotation.
    pub period: usize,
    /// Confidence quantile below which mapped values are rejected.
    pub quantile: f64,
    /// Divide the dual-softmax logits by `sqrt(d)` like regular attention.
    pub scale_dual_softmax: bool,
}

impl Default for CrossFrameConfig {
    fn default() -> Self {
        Self {
            mode: AttentionMode::RvmDsf,
            period: 4,
            quantile: 0.4,
            scale_dual_softmax: true,
        }
    }
}

impl CrossFrameConfig {
    pub fn new(
        mode: AttentionMode,
        period: usize,
        quantile: f64,
        scale_dual_softmax: bool,
    ) -> Result<Self> {
        let config = Self {
            mode,
            period,
            quantile,
            scale_dual_softmax,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_mode(self, mode: AttentionMode) -> Self {
        Self { mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(AttentionError::ZeroPeriod);
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(AttentionError::Quantile(self.quantile));
        }
        Ok(())
    }
}

/// Per-frame queries, keys and values, each `frames x tokens x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameQKV {
    q: Array3<f64>,
    k: Array3<f64>,
    v: Array3<f64>,
}

impl FrameQKV {
    pub fn new(q: Array3<f64>, k: Array3<f64>, v: Array3<f64>) -> Result<Self> {
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(AttentionError::Shape(format!(
                "q {:?}, k {:?}, v {:?} must share one shape",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        if q.shape().contains(&0) {
            return Err(AttentionError::Shape(format!(
                "empty dimension in {:?}",
                q.shape()
            )));
        }
        ensure_finite(q.iter(), "queries")?;
        ensure_finite(k.iter(), "keys")?;
        ensure_finite(v.iter(), "values")?;
        Ok(Self { q, k, v })
    }

    pub fn frames(&self) -> usize {
        self.q.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.q.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.q.shape()[2]
    }

    pub fn q(&self) -> &Array3<f64> {
        &self.q
    }

    pub fn k(&self) -> &Array3<f64> {
        &self.k
    }

    pub fn v(&self) -> &Array3<f64> {
        &self.v
    }
}

/// Binary keep-mask over target tokens plus the threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMask {
    /// Averaged dual-softmax confidence per target token.
    pub confidence: Vec<f64>,
    /// `true` where the mapped value is trusted.
    pub mask: Vec<bool>,
    pub phi: f64,
}

impl ConfidenceMask {
    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn ensure_finite<'a>(mut values: impl Iterator<Item = &'a f64>, what: &'static str) -> Result<()> {
    if values.all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AttentionError::NonFinite(what))
    }
}

fn check_qkv(q: &ArrayView2<f64>, k: &ArrayView2<f64>, v: &ArrayView2<f64>) -> Result<()> {
    if q.ncols() == 0 || q.nrows() == 0 || k.nrows() == 0 {
        return Err(AttentionError::Shape(format!(
            "empty operand: q {:?}, k {:?}",
            q.shape(),
            k.shape()
        )));
    }
    if q.ncols() != k.ncols() {
        return Err(AttentionError::Shape(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(AttentionError::Shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    ensure_finite(q.iter(), "queries")?;
    ensure_finite(k.iter(), "keys")?;
    ensure_finite(v.iter(), "values")?;
    Ok(())
}

/// Numerically stable softmax along each row, in place.
pub(crate) fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

fn logits(q: &ArrayView2<f64>, k: &ArrayView2<f64>, scale: bool) -> Array2<f64> {
    let mut s = q.dot(&k.t());
    if scale {
        let inv = 1.0 / (q.ncols() as f64).sqrt();
        s.mapv_inplace(|x| x * inv);
    }
    s
}

/// `softmax(q kᵀ / sqrt(d)) v`.
///
/// `k` and `v` may hold a different number of tokens than `q`; only their
/// row counts need to agree.
pub fn scaled_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_qkv(&q, &k, &v)?;
    let mut weights = logits(&q, &k, true);
    softmax_rows(&mut weights);
    Ok(weights.dot(&v))
}

/// Reference frame (1-based) for the `t_prime`-th step since value mapping
/// started: `(t_prime / period) mod frames + 1`.
pub fn rotational_reference(t_prime: usize, period: usize, frames: usize) -> Result<usize> {
    if period == 0 {
        return Err(AttentionError::ZeroPeriod);
    }
    if frames == 0 {
        return Err(AttentionError::NoFrames);
    }
    Ok((t_prime / period) % frames + 1)
}

/// Attention of one frame's queries over a reference frame's keys and values.
pub fn value_map(
    q: ArrayView2<f64>,
    k_ref: ArrayView2<f64>,
    v_ref: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    scaled_attention(q, k_ref, v_ref)
}

/// Dual-softmax matching confidence between target queries and reference
/// keys: the row softmax of the logits times their column softmax.
///
/// Entry `(i, j)` is high only when reference token `j` is target token `i`'s
/// best match *and* vice versa.
pub fn dual_softmax(
    q: ArrayView2<f64>,
    k_ref: ArrayView2<f64>,
    scale: bool,
) -> Result<Array2<f64>> {
    if q.shape() != k_ref.shape() || q.is_empty() {
        return Err(AttentionError::Shape(format!(
            "query {:?} and reference key {:?} must share one non-empty shape",
            q.shape(),
            k_ref.shape()
        )));
    }
    ensure_finite(q.iter(), "queries")?;
    ensure_finite(k_ref.iter(), "keys")?;

    let s = logits(&q, &k_ref, scale);
    let mut by_row = s.clone();
    softmax_rows(&mut by_row);
    // Column softmax of S is the row softmax of Sᵀ, transposed back.
    let mut by_col = s.t().to_owned();
    softmax_rows(&mut by_col);
    Ok(by_row * by_col.t())
}

/// Averages dual-softmax confidence over the reference-token axis and keeps
/// target tokens whose confidence strictly exceeds the lower empirical
/// `quantile` of all confidences.
pub fn confidence_mask(c_dual: ArrayView2<f64>, quantile: f64) -> Result<ConfidenceMask> {
    if c_dual.is_empty() {
        return Err(AttentionError::Shape("empty confidence matrix".into()));
    }
    ensure_finite(c_dual.iter(), "confidence")?;
    let confidence: Vec<f64> = c_dual
        .rows()
        .into_iter()
        .map(|row| row.sum() / row.len() as f64)
        .collect();
    threshold_confidence(confidence, quantile)
}

/// Thresholds per-token confidence at its lower `quantile`.
///
/// `phi` is the sorted confidence at index `ceil(q * n) - 1`, clamped to the
/// valid range; a token is kept when its confidence is strictly above `phi`.
/// `quantile == 0` keeps every token.
pub fn threshold_confidence(confidence: Vec<f64>, quantile: f64) -> Result<ConfidenceMask> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(AttentionError::Quantile(quantile));
    }
    if confidence.is_empty() {
        return Err(AttentionError::Shape("no confidence scores".into()));
    }
    ensure_finite(confidence.iter(), "confidence")?;

    if quantile == 0.0 {
        return Ok(ConfidenceMask {
            mask: vec![true; confidence.len()],
            phi: f64::MIN,
            confidence,
        });
    }
    let mut sorted = confidence.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let index = ((quantile * n as f64).ceil() as usize)
        .saturating_sub(1)
        .min(n - 1);
    let phi = sorted[index];
    let mask = confidence.iter().map(|&c| c > phi).collect();
    Ok(ConfidenceMask {
        confidence,
        mask,
        phi,
    })
}

/// Row-wise blend of value mapping and the frame's own attention: rows with a
/// set mask bit take the mapped output, the rest keep self-attention.
pub fn filtered_value_map(
    q: ArrayView2<f64>,
    k_own: ArrayView2<f64>,
    v_own: ArrayView2<f64>,
    k_ref: ArrayView2<f64>,
    v_ref: ArrayView2<f64>,
    mask: &[bool],
) -> Result<Array2<f64>> {
    if mask.len() != q.nrows() {
        return Err(AttentionError::MaskLength {
            found: mask.len(),
            expected: q.nrows(),
        });
    }
    let mut out = scaled_attention(q, k_own, v_own)?;
    if mask.iter().any(|&m| m) {
        let mapped = value_map(q, k_ref, v_ref)?;
        if mapped.ncols() != out.ncols() {
            return Err(AttentionError::Shape(format!(
                "own values have {} channels, reference values {}",
                out.ncols(),
                mapped.ncols()
            )));
        }
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            out.row_mut(i).assign(&mapped.row(i));
        }
    }
    Ok(out)
}

/// Keys and values of every frame in an attention context.
///
/// A context may contain frames whose keys and values were computed earlier
/// (cached) alongside frames being computed now; only the latter need
/// queries.
#[derive(Debug, Clone)]
pub struct FrameContext<'a> {
    keys: Vec<ArrayView2<'a, f64>>,
    values: Vec<ArrayView2<'a, f64>>,
}

impl<'a> FrameContext<'a> {
    pub fn new(keys: Vec<ArrayView2<'a, f64>>, values: Vec<ArrayView2<'a, f64>>) -> Result<Self> {
        if keys.is_empty() {
            return Err(AttentionError::NoFrames);
        }
        if keys.len() != values.len() {
            return Err(AttentionError::Shape(format!(
                "{} key frames but {} value frames",
                keys.len(),
                values.len()
            )));
        }
        let shape = keys[0].shape().to_vec();
        if keys
            .iter()
            .chain(values.iter())
            .any(|m| m.shape() != shape.as_slice())
        {
            return Err(AttentionError::Shape(
                "all context frames must share one shape".into(),
            ));
        }
        Ok(Self { keys, values })
    }

    pub fn frames(&self) -> usize {
        self.keys.len()
    }

    /// Self-attention output for context frame `frame` (0-based) given its
    /// queries. `t_prime` is required by the rotational modes.
    pub fn attend(
        &self,
        frame: usize,
        query: ArrayView2<f64>,
        config: &CrossFrameConfig,
        t_prime: Option<usize>,
    ) -> Result<Array2<f64>> {
        let frames = self.frames();
        if frame >= frames {
            return Err(AttentionError::FrameIndex { frame, frames });
        }
        let own = (self.keys[frame], self.values[frame]);
        match config.mode {
            AttentionMode::PerFrame => scaled_attention(query, own.0, own.1),
            AttentionMode::FirstFrame => scaled_attention(query, self.keys[0], self.values[0]),
            AttentionMode::SparseCausal => {
                if frame == 0 {
                    scaled_attention(query, own.0, own.1)
                } else {
                    let prev = frame - 1;
                    let k = concatenate(Axis(0), &[self.keys[0], self.keys[prev]])
                        .map_err(|e| AttentionError::Shape(e.to_string()))?;
                    let v = concatenate(Axis(0), &[self.values[0], self.values[prev]])
                        .map_err(|e| AttentionError::Shape(e.to_string()))?;
                    scaled_attention(query, k.view(), v.view())
                }
            }
            AttentionMode::Rvm | AttentionMode::RvmDsf => {
                let t_prime = t_prime.ok_or(AttentionError::MissingMappingStep(config.mode))?;
                let r = rotational_reference(t_prime, config.period, frames)? - 1;
                let (k_ref, v_ref) = (self.keys[r], self.values[r]);
                if config.mode == AttentionMode::Rvm {
                    return value_map(query, k_ref, v_ref);
                }
                let c_dual = dual_softmax(query, k_ref, config.scale_dual_softmax)?;
                let mask = confidence_mask(c_dual.view(), config.quantile)?;
                filtered_value_map(query, own.0, own.1, k_ref, v_ref, &mask.mask)
            }
        }
    }
}

/// Applies the configured cross-frame attention to every frame of `qkv`.
pub fn cross_frame_attention(
    qkv: &FrameQKV,
    config: &CrossFrameConfig,
    t_prime: Option<usize>,
) -> Result<Array3<f64>> {
    config.validate()?;
    if config.mode.is_rotational() && t_prime.is_none() {
        return Err(AttentionError::MissingMappingStep(config.mode));
    }
    let frames = qkv.frames();
    let context = FrameContext::new(qkv.k.outer_iter().collect(), qkv.v.outer_iter().collect())?;
    let mut out = Array3::zeros(qkv.q.raw_dim());
    for f in 0..frames {
        let y = context.attend(f, qkv.q.index_axis(Axis(0), f), config, t_prime)?;
        out.index_axis_mut(Axis(0), f).assign(&y);
    }
    Ok(out)
}
