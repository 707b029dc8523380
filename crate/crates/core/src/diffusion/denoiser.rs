use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DiffusionError, NoiseSchedule, Result, TextEmbedding, TEXT_DIM};
use crate::attention::{scaled_attention, CrossFrameConfig, FrameContext};

/// Number of self-attention layers (one per transformer block).
pub const ATTENTION_LAYERS: usize = 2;

/// Keys and values of one frame in one self-attention layer.
pub type LayerKv = (Array2<f64>, Array2<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserDims {
    /// Latent channels `c`.
    pub channels: usize,
    /// Transformer width `d`; must be a multiple of 4.
    pub model_dim: usize,
    /// The text embedding is split into this many context tokens.
    pub text_tokens: usize,
    pub ff_dim: usize,
}

impl DenoiserDims {
    pub fn new(channels: usize, model_dim: usize) -> Self {
        Self {
            channels,
            model_dim,
            text_tokens: 4,
            ff_dim: 2 * model_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(4) {
            return Err(DiffusionError::Shape(format!(
                "need channels >= 1 and a model width divisible by 4, got {self:?}"
            )));
        }
        if self.text_tokens == 0 || !TEXT_DIM.is_multiple_of(self.text_tokens) || self.ff_dim == 0 {
            return Err(DiffusionError::Shape(format!(
                "text tokens must divide {TEXT_DIM}, got {self:?}"
            )));
        }
        Ok(())
    }

    fn text_width(&self) -> usize {
        TEXT_DIM / self.text_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    cross_q: Array2<f64>,
    cross_k: Array2<f64>,
    cross_v: Array2<f64>,
    cross_o: Array2<f64>,
    ff_in: Array2<f64>,
    ff_out: Array2<f64>,
}

/// Pseudo-random weights of the toy noise predictor, reproducible from the
/// seed alone.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    seed: u64,
    dims: DenoiserDims,
    input: Array2<f64>,
    input_bias: Array1<f64>,
    time: Array2<f64>,
    blocks: Vec<Block>,
    output: Array2<f64>,
}

struct WeightSampler(ChaCha8Rng);

impl WeightSampler {
    fn matrix(&mut self, rows: usize, cols: usize, gain: f64) -> Array2<f64> {
        let normal = Normal::new(0.0, gain / (rows as f64).sqrt()).expect("positive std");
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut self.0))
    }
}

impl DenoiserParams {
    pub fn from_seed(seed: u64, dims: DenoiserDims) -> Result<Self> {
        dims.validate()?;
        let mut w = WeightSampler(ChaCha8Rng::seed_from_u64(seed));
        let (c, d, tw, ff) = (
            dims.channels,
            dims.model_dim,
            dims.text_width(),
            dims.ff_dim,
        );
        let input = w.matrix(c, d, 1.0);
        let input_bias = w.matrix(1, d, 0.1).remove_axis(Axis(0));
        let time = w.matrix(d, d, 0.5);
        let blocks = (0..ATTENTION_LAYERS)
            .map(|_| Block {
                wq: w.matrix(d, d, 2.0),
                wk: w.matrix(d, d, 2.0),
                wv: w.matrix(d, d, 1.0),
                wo: w.matrix(d, d, 1.0),
                cross_q: w.matrix(d, d, 1.0),
                cross_k: w.matrix(tw, d, 1.0),
                cross_v: w.matrix(tw, d, 1.0),
                cross_o: w.matrix(d, d, 1.0),
                ff_in: w.matrix(d, ff, 1.0),
                ff_out: w.matrix(ff, d, 1.0),
            })
            .collect();
        let output = w.matrix(d, c, 1.0);
        Ok(Self {
            seed,
            dims,
            input,
            input_bias,
            time,
            blocks,
            output,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> DenoiserDims {
        self.dims
    }

    /// Predicts the noise in each frame of `input.latents`.
    ///
    /// Internally the network estimates the clean latent (bounded by `tanh`)
    /// and converts it to a noise estimate at `input.alpha_bar`.
    pub fn predict(&self, input: &DenoiserInput<'_>) -> Result<DenoiserOutput> {
        let frames = input.latents.len();
        if frames == 0 {
            return Err(DiffusionError::NoFrames);
        }
        if input.text.len() != frames {
            return Err(DiffusionError::Shape(format!(
                "{} text embeddings for {frames} frames",
                input.text.len()
            )));
        }
        if !(input.alpha_bar > 0.0 && input.alpha_bar < 1.0) {
            return Err(DiffusionError::AlphaBar(input.alpha_bar));
        }
        if !input.prefix.is_empty() && input.prefix.len() != ATTENTION_LAYERS {
            return Err(DiffusionError::Shape(format!(
                "cached context covers {} layers, expected {ATTENTION_LAYERS}",
                input.prefix.len()
            )));
        }
        let (h, w, c) = input.latents[0].dim();
        if c != self.dims.channels || input.latents.iter().any(|z| z.dim() != (h, w, c)) {
            return Err(DiffusionError::Shape(format!(
                "frames must share shape {:?} with {} channels",
                (h, w, c),
                self.dims.channels
            )));
        }
        let (n, d) = (h * w, self.dims.model_dim);

        let shared = positional_grid(h, w, d) + &sinusoid(input.timestep as f64, d).dot(&self.time);
        let mut hidden: Vec<Array2<f64>> = input
            .latents
            .iter()
            .map(|z| {
                let tokens = z
                    .to_shape((n, c))
                    .map_err(|e| DiffusionError::Shape(e.to_string()))?;
                Ok(tokens.dot(&self.input) + &self.input_bias + &shared)
            })
            .collect::<Result<_>>()?;
        let context: Vec<Array2<f64>> = input
            .text
            .iter()
            .map(|e| text_tokens(e, self.dims.text_tokens))
            .collect();

        let mut captured = Vec::new();
        for (layer, block) in self.blocks.iter().enumerate() {
            let normed: Vec<Array2<f64>> = hidden.iter().map(rms_norm).collect();
            let keys: Vec<Array2<f64>> = normed.iter().map(|x| x.dot(&block.wk)).collect();
            let values: Vec<Array2<f64>> = normed.iter().map(|x| x.dot(&block.wv)).collect();

            let cached: &[(ArrayView2<f64>, ArrayView2<f64>)] =
                input.prefix.get(layer).map(Vec::as_slice).unwrap_or(&[]);
            let offset = cached.len();
            let frame_ctx = FrameContext::new(
                cached
                    .iter()
                    .map(|kv| kv.0.view())
                    .chain(keys.iter().map(|k| k.view()))
                    .collect(),
                cached
                    .iter()
                    .map(|kv| kv.1.view())
                    .chain(values.iter().map(|v| v.view()))
                    .collect(),
            )?;
            for (j, x) in normed.iter().enumerate() {
                let q = x.dot(&block.wq);
                let y = frame_ctx.attend(offset + j, q.view(), &input.attention, input.t_prime)?;
                hidden[j] += &y.dot(&block.wo);
            }
            drop(frame_ctx);
            if input.capture {
                captured.push(keys.into_iter().zip(values).collect());
            }

            for (x, ctx) in hidden.iter_mut().zip(&context) {
                let q = rms_norm(x).dot(&block.cross_q);
                let k = ctx.dot(&block.cross_k);
                let v = ctx.dot(&block.cross_v);
                *x += &scaled_attention(q.view(), k.view(), v.view())?.dot(&block.cross_o);
            }
            for x in hidden.iter_mut() {
                let inner = rms_norm(x).dot(&block.ff_in).mapv(|a| a.max(0.0));
                *x += &inner.dot(&block.ff_out);
            }
        }

        let (sqrt_ab, sigma) = (input.alpha_bar.sqrt(), (1.0 - input.alpha_bar).sqrt());
        let eps = hidden
            .iter()
            .zip(input.latents)
            .map(|(x, z)| {
                let clean = rms_norm(x).dot(&self.output).mapv(f64::tanh);
                let clean = clean
                    .into_shape_with_order((h, w, c))
                    .map_err(|e| DiffusionError::Shape(e.to_string()))?;
                Ok((z - &(clean * sqrt_ab)) / sigma)
            })
            .collect::<Result<_>>()?;
        Ok(DenoiserOutput { eps, kv: captured })
    }
}

/// One denoiser evaluation over a batch of frames.
#[derive(Debug, Clone)]
pub struct DenoiserInput<'a> {
    /// Latents of the frames being denoised, each `h x w x c`.
    pub latents: &'a [Array3<f64>],
    pub timestep: usize,
    pub alpha_bar: f64,
    /// One embedding per frame in `latents`.
    pub text: &'a [TextEmbedding],
    /// Keys and values of earlier frames that precede `latents` in the
    /// attention context, indexed `[layer][frame]`. Empty for none.
    pub prefix: &'a [Vec<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>],
    pub attention: CrossFrameConfig,
    pub t_prime: Option<usize>,
    /// Return each layer's keys and values for the frames in `latents`.
    pub capture: bool,
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps: Vec<Array3<f64>>,
    /// `[layer][frame]` keys and values, empty unless captured.
    pub kv: Vec<Vec<LayerKv>>,
}

/// Noise prediction for a whole latent video without cached context.
pub fn toy_denoiser(
    latents: &Array4<f64>,
    t: usize,
    embeddings: &[TextEmbedding],
    params: &DenoiserParams,
    attention: &CrossFrameConfig,
    t_prime: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Array4<f64>> {
    let alpha_bar = schedule
        .alpha_bar(t)
        .filter(|_| t > 0)
        .ok_or(DiffusionError::Timestep {
            t,
            t_prev: 0,
            steps: schedule.steps(),
        })?;
    let frames: Vec<Array3<f64>> = latents.outer_iter().map(|f| f.to_owned()).collect();
    let out = params.predict(&DenoiserInput {
        latents: &frames,
        timestep: t,
        alpha_bar,
        text: embeddings,
        prefix: &[],
        attention: *attention,
        t_prime,
        capture: false,
    })?;
    let mut eps = Array4::zeros(latents.raw_dim());
    for (mut dst, src) in eps.outer_iter_mut().zip(&out.eps) {
        dst.assign(src);
    }
    Ok(eps)
}

fn rms_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + 1e-6).sqrt();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

fn sinusoid(position: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    Array1::from_shape_fn(dim, |i| {
        let freq = 10_000f64.powf(-((i % half) as f64) / half as f64);
        if i < half {
            (position * freq).sin()
        } else {
            (position * freq).cos()
        }
    })
}

/// Row/column sinusoidal codes; the first half of the channels encodes the
/// row, the second half the column.
fn positional_grid(h: usize, w: usize, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((h * w, dim));
    for y in 0..h {
        let row_code = sinusoid(y as f64, half);
        for x in 0..w {
            let col_code = sinusoid(x as f64, half);
            let mut token = out.row_mut(y * w + x);
            token.slice_mut(ndarray::s![..half]).assign(&row_code);
            token.slice_mut(ndarray::s![half..]).assign(&col_code);
        }
    }
    out
}

fn text_tokens(embedding: &TextEmbedding, tokens: usize) -> Array2<f64> {
    let width = TEXT_DIM / tokens;
    let scale = (TEXT_DIM as f64).sqrt();
    Array2::from_shape_fn((tokens, width), |(i, j)| {
        embedding.as_slice()[i * width + j] * scale
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionMode;
    use crate::diffusion::embed_text;

    fn noise(frames: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array4::from_shape_simple_fn((frames, 4, 4, 3), || normal.sample(&mut rng))
    }

    #[test]
    fn params_reproducible_from_seed() {
        let dims = DenoiserDims::new(3, 8);
        assert_eq!(
            DenoiserParams::from_seed(9, dims).unwrap(),
            DenoiserParams::from_seed(9, dims).unwrap()
        );
        assert_ne!(
            DenoiserParams::from_seed(9, dims).unwrap(),
            DenoiserParams::from_seed(10, dims).unwrap()
        );
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(DenoiserParams::from_seed(0, DenoiserDims::new(3, 6)).is_err());
        assert!(DenoiserParams::from_seed(0, DenoiserDims::new(0, 8)).is_err());
    }

    #[test]
    fn symmetric_inputs_give_identical_frames_under_first_frame() {
        let params = DenoiserParams::from_seed(1, DenoiserDims::new(3, 8)).unwrap();
        let schedule = NoiseSchedule::linear(20).unwrap();
        let one = noise(1, 4);
        let mut latents = Array4::zeros((3, 4, 4, 3));
        for mut f in latents.outer_iter_mut() {
            f.assign(&one.index_axis(Axis(0), 0));
        }
        let text = vec![embed_text("same prompt").unwrap(); 3];
        let config = CrossFrameConfig::default().with_mode(AttentionMode::FirstFrame);
        let eps = toy_denoiser(&latents, 12, &text, &params, &config, None, &schedule).unwrap();
        assert_eq!(eps.shape(), latents.shape());
        let first = eps.index_axis(Axis(0), 0);
        for f in eps.outer_iter() {
            assert_eq!(f, first);
        }
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let params = DenoiserParams::from_seed(2, DenoiserDims::new(3, 8)).unwrap();
        let schedule = NoiseSchedule::linear(20).unwrap();
        let latents = noise(2, 5);
        let text = vec![embed_text("a").unwrap(), embed_text("b c").unwrap()];
        let config = CrossFrameConfig::default();
        let a = toy_denoiser(&latents, 7, &text, &params, &config, Some(3), &schedule).unwrap();
        let b = toy_denoiser(&latents, 7, &text, &params, &config, Some(3), &schedule).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatched_channels_and_text() {
        let params = DenoiserParams::from_seed(2, DenoiserDims::new(2, 8)).unwrap();
        let schedule = NoiseSchedule::linear(20).unwrap();
        let latents = noise(2, 5);
        let text = vec![embed_text("a").unwrap(); 2];
        let config = CrossFrameConfig::default().with_mode(AttentionMode::PerFrame);
        assert!(toy_denoiser(&latents, 7, &text, &params, &config, None, &schedule).is_err());

        let params = DenoiserParams::from_seed(2, DenoiserDims::new(3, 8)).unwrap();
        assert!(toy_denoiser(&latents, 7, &text[..1], &params, &config, None, &schedule).is_err());
        assert!(toy_denoiser(&latents, 0, &text, &params, &config, None, &schedule).is_err());
    }
}
