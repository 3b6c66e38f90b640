//! Reconstruction quality metrics and measurement noise.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Mean squared error between two images of identical shape.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(invalid("mse requires images of identical shape"));
    }
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in decibels, `10 log10(peak^2 / MSE)`.
/// Identical images return positive infinity.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(invalid("psnr peak must be positive"));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, rng: &mut Rng) -> Result<Image> {
    if sigma < 0.0 {
        return Err(invalid("noise level must be nonnegative"));
    }
    let mut out = img.clone();
    if sigma > 0.0 {
        for v in out.data_mut() {
            *v += sigma * rng.normal();
        }
    }
    Ok(out)
}
