use serde::{Deserialize, Serialize};

use super::{DiffusionError, Result};

/// Per-step noise variances and their cumulative signal retention.
///
/// Timesteps are 1-based: `beta(1)` is the first forward step and
/// `alpha_bar(0)` is defined as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("no steps".into()));
        }
        if let Some(&b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::Beta(b));
        }
        let alpha_bars: Vec<f64> = betas
            .iter()
            .scan(1.0, |acc, &b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars[alpha_bars.len() - 1] <= 0.0 {
            return Err(DiffusionError::Schedule(
                "cumulative alpha must be positive and strictly decreasing".into(),
            ));
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Linear betas rescaled to `steps`: `1e-4 * 1000/T` up to `0.02 * 1000/T`.
    ///
    /// For `T <= 20` the rescaled end point would reach 1, so betas are capped
    /// at 0.999.
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(DiffusionError::Schedule("no steps".into()));
        }
        let scale = 1000.0 / steps as f64;
        let (start, end) = ((1e-4 * scale).min(0.999), (0.02 * scale).min(0.999));
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.betas.get(i).copied())
    }

    /// Cumulative product of `1 - beta` through step `t`; 1 at `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> Option<f64> {
        match t {
            0 => Some(1.0),
            t => self.alpha_bars.get(t - 1).copied(),
        }
    }
}
