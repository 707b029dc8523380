use ndarray::{Array3, ArrayView3};

use super::{DiffusionError, Result};

/// Translates frame `frame`'s latent (1-based) by `(frame - 1) * delta`
/// latent pixels, replicating edge pixels into the uncovered border.
///
/// Positive `dx` moves content right, positive `dy` moves it down.
pub fn motion_shift(
    latent: ArrayView3<f64>,
    frame: usize,
    delta: (i32, i32),
) -> Result<Array3<f64>> {
    let (height, width, _) = latent.dim();
    let steps = frame.saturating_sub(1) as i64;
    let (dx, dy) = (steps * delta.0 as i64, steps * delta.1 as i64);
    if dx.unsigned_abs() >= width as u64 || dy.unsigned_abs() >= height as u64 {
        return Err(DiffusionError::MotionOutOfBounds {
            dx,
            dy,
            width,
            height,
        });
    }
    if dx == 0 && dy == 0 {
        return Ok(latent.to_owned());
    }
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut out = Array3::zeros(latent.raw_dim());
    for y in 0..height {
        let sy = clamp(y as i64 - dy, height);
        for x in 0..width {
            let sx = clamp(x as i64 - dx, width);
            out.slice_mut(ndarray::s![y, x, ..])
                .assign(&latent.slice(ndarray::s![sy, sx, ..]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp() -> Array3<f64> {
        Array::from_shape_fn((4, 5, 1), |(y, x, _)| (10 * y + x) as f64)
    }

    #[test]
    fn zero_delta_and_first_frame_are_identity() {
        let r = ramp();
        for k in 1..=4 {
            assert_eq!(motion_shift(r.view(), k, (0, 0)).unwrap(), r);
        }
        assert_eq!(motion_shift(r.view(), 1, (3, -2)).unwrap(), r);
    }

    #[test]
    fn third_frame_moves_two_pixels_right() {
        let out = motion_shift(ramp().view(), 3, (1, 0)).unwrap();
        for y in 0..4 {
            let row: Vec<f64> = (0..5).map(|x| out[[y, x, 0]]).collect();
            let base = (10 * y) as f64;
            assert_eq!(row, vec![base, base, base, base + 1.0, base + 2.0]);
        }
    }

    #[test]
    fn upward_shift_replicates_bottom_row() {
        let out = motion_shift(ramp().view(), 2, (0, -1)).unwrap();
        let col: Vec<f64> = (0..4).map(|y| out[[y, 0, 0]]).collect();
        assert_eq!(col, vec![10.0, 20.0, 30.0, 30.0]);
    }

    #[test]
    fn rejects_shift_past_the_grid() {
        assert!(matches!(
            motion_shift(ramp().view(), 6, (1, 0)),
            Err(DiffusionError::MotionOutOfBounds { dx: 5, .. })
        ));
        assert!(motion_shift(ramp().view(), 5, (1, 0)).is_ok());
        assert!(motion_shift(ramp().view(), 5, (0, 1)).is_err());
    }
}
