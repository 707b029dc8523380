use ndarray::{Array, Dimension, Zip};

use super::{DiffusionError, NoiseSchedule, Result};

fn same_shape<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DiffusionError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// One forward noising step: `sqrt(1 - beta) * z_prev + sqrt(beta) * eps`.
pub fn forward_noise_step<D: Dimension>(
    z_prev: &Array<f64, D>,
    beta: f64,
    eps: &Array<f64, D>,
) -> Result<Array<f64, D>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(DiffusionError::Beta(beta));
    }
    same_shape(z_prev, eps, "forward step")?;
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(Zip::from(z_prev)
        .and(eps)
        .map_collect(|&z, &e| a * z + b * e))
}

/// Samples `z_t` directly from `z_0`: `sqrt(ab) * z0 + sqrt(1 - ab) * eps`.
pub fn forward_marginal<D: Dimension>(
    z0: &Array<f64, D>,
    alpha_bar: f64,
    eps: &Array<f64, D>,
) -> Result<Array<f64, D>> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(DiffusionError::AlphaBar(alpha_bar));
    }
    same_shape(z0, eps, "forward marginal")?;
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(Zip::from(z0).and(eps).map_collect(|&z, &e| a * z + b * e))
}

/// Classifier-free guidance: `uncond + scale * (cond - uncond)`.
pub fn cfg_combine<D: Dimension>(
    eps_uncond: &Array<f64, D>,
    eps_cond: &Array<f64, D>,
    scale: f64,
) -> Result<Array<f64, D>> {
    same_shape(eps_uncond, eps_cond, "guidance")?;
    Ok(Zip::from(eps_uncond)
        .and(eps_cond)
        .map_collect(|&u, &c| u + scale * (c - u)))
}

/// Deterministic (eta = 0) reverse update from `t` to `t_prev`.
///
/// Predicts `z_0` from the noise estimate, then re-noises it to the
/// cumulative level of `t_prev`, reusing the same noise direction.
pub fn ddim_step<D: Dimension>(
    z_t: &Array<f64, D>,
    eps_hat: &Array<f64, D>,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>> {
    let steps = schedule.steps();
    if t <= t_prev || t > steps {
        return Err(DiffusionError::Timestep { t, t_prev, steps });
    }
    same_shape(z_t, eps_hat, "reverse step")?;
    let ab_t = schedule.alpha_bar(t).expect("t checked against schedule");
    let ab_prev = schedule.alpha_bar(t_prev).expect("t_prev < t");
    let (sig_t, sig_prev) = ((1.0 - ab_t).sqrt(), (1.0 - ab_prev).sqrt());
    let (sqrt_ab_t, sqrt_ab_prev) = (ab_t.sqrt(), ab_prev.sqrt());
    Ok(Zip::from(z_t).and(eps_hat).map_collect(|&z, &e| {
        let z0 = (z - sig_t * e) / sqrt_ab_t;
        sqrt_ab_prev * z0 + sig_prev * e
    }))
}
