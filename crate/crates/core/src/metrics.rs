use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR for a zero-error estimate.
pub const PSNR_CAP_DB: f64 = 200.0;

/// Peak signal-to-noise ratio in dB with unit peak intensity.
pub fn psnr(reference: &Image, estimate: &Image) -> Result<f64> {
    if reference.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch {
            expected: reference.shape().to_string(),
            actual: estimate.shape().to_string(),
        });
    }
    let mse = reference.sub(estimate).norm_sq() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}
