use serde::{Deserialize, Serialize};

use super::{DiffusionError, Result};

/// Width of [`TextEmbedding`] vectors.
pub const TEXT_DIM: usize = 64;

/// Prompt embedded for the unconditional guidance branch.
pub const NULL_PROMPT: &str = "<null>";

const POSITION_WEIGHT: f64 = 0.25;

/// Unit-norm prompt embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding(Vec<f64>);

impl TextEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &TextEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Hashed bag-of-words embedding with sinusoidal position mixing.
///
/// Each lowercased whitespace token contributes a signed one-hot at a hashed
/// bucket plus a small sinusoidal code of its position, rotated by the
/// token hash; the sum is
/// L2-normalized.
pub fn embed_text(prompt: &str) -> Result<TextEmbedding> {
    let mut v = vec![0.0; TEXT_DIM];
    let mut tokens = 0;
    for (pos, token) in prompt.split_whitespace().enumerate() {
        tokens += 1;
        let h = fnv1a(token.to_lowercase().as_bytes());
        let bucket = (h % TEXT_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
        // Rotating the position code by the token hash ties position to
        // the token, so reordering words changes the embedding.
        let offset = ((h >> 40) % (TEXT_DIM as u64 / 2)) as usize;
        for i in 0..TEXT_DIM / 2 {
            let freq = 10_000f64.powf(-(2.0 * i as f64) / TEXT_DIM as f64);
            let angle = pos as f64 * freq;
            let slot = 2 * ((i + offset) % (TEXT_DIM / 2));
            v[slot] += POSITION_WEIGHT * angle.sin();
            v[slot + 1] += POSITION_WEIGHT * angle.cos();
        }
    }
    if tokens == 0 {
        return Err(DiffusionError::EmptyPrompt);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(DiffusionError::Shape("prompt embedding vanished".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(TextEmbedding(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let p = "A corgi is running on the beach at sunset";
        let a = embed_text(p).unwrap();
        let b = embed_text(p).unwrap();
        assert_eq!(a, b);
        let norm = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_token_changes_direction() {
        let a = embed_text("a corgi is running").unwrap();
        let b = embed_text("a corgi is jumping").unwrap();
        assert!(a.cosine(&b) < 1.0 - 1e-6);
    }

    #[test]
    fn word_order_matters() {
        let a = embed_text("dog chases cat").unwrap();
        let b = embed_text("cat chases dog").unwrap();
        assert!(a.cosine(&b) < 1.0 - 1e-9);
    }

    #[test]
    fn empty_prompts_fail() {
        assert!(matches!(embed_text(""), Err(DiffusionError::EmptyPrompt)));
        assert!(matches!(
            embed_text(" \n\t"),
            Err(DiffusionError::EmptyPrompt)
        ));
    }
}
