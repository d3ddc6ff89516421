//! Linear-Gaussian observation model `y = Hx + w` with circular blur.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::image::{Image, Shape};
use crate::kernel::Kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub kernel: Kernel,
    pub noise_sigma: f64,
}

impl ObservationModel {
    pub fn new(kernel: Kernel, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sigma must be positive and finite, got {noise_sigma}"
            )));
        }
        Ok(Self { kernel, noise_sigma })
    }

    /// Diagonalised operator for images of `shape`.
    pub fn operator(&self, shape: Shape) -> Result<BlurOperator> {
        if !self.kernel.fits(shape) {
            return Err(Error::InvalidArgument(format!(
                "kernel {}x{} larger than image {shape}",
                self.kernel.height(),
                self.kernel.width()
            )));
        }
        let fft = Fft2d::new(shape);
        let transfer = self.kernel.transfer(&fft);
        Ok(BlurOperator {
            fft,
            transfer,
            sigma: self.noise_sigma,
        })
    }
}

/// The blur `H` on a fixed grid, together with the noise level.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    fft: Fft2d,
    transfer: Vec<Complex64>,
    sigma: f64,
}

impl BlurOperator {
    pub fn shape(&self) -> Shape {
        self.fft.shape()
    }

    pub fn fft(&self) -> &Fft2d {
        &self.fft
    }

    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn apply(&self, x: &Image) -> Image {
        self.fft.apply_multiplier(x, &self.transfer)
    }

    pub fn adjoint(&self, x: &Image) -> Image {
        let conj: Vec<Complex64> = self.transfer.iter().map(|t| t.conj()).collect();
        self.fft.apply_multiplier(x, &conj)
    }

    /// `max_k |ĥ_k|²`, the squared operator norm of `H`.
    pub fn gain_sq(&self) -> f64 {
        self.transfer.iter().map(|t| t.norm_sqr()).fold(0.0, f64::max)
    }

    /// Lipschitz constant of the log-likelihood gradient, `‖H‖²/σ²`.
    pub fn lipschitz(&self) -> f64 {
        self.gain_sq() / (self.sigma * self.sigma)
    }

    /// `log p(y|x)` up to an additive constant: `-‖y - Hx‖² / 2σ²`.
    pub fn log_likelihood(&self, y: &Image, x: &Image) -> f64 {
        -y.sub(&self.apply(x)).norm_sq() / (2.0 * self.sigma * self.sigma)
    }

    /// `∇ log p(y|x) = Hᵀ(y - Hx) / σ²`, in one forward/inverse FFT pair.
    pub fn log_likelihood_grad(&self, y: &Image, x: &Image) -> Image {
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let xs = self.fft.forward_image(x);
        let ys = self.fft.forward_image(y);
        let spec = xs
            .iter()
            .zip(&ys)
            .zip(&self.transfer)
            .map(|((xk, yk), hk)| hk.conj() * (yk - hk * xk) * inv_var)
            .collect();
        self.fft.inverse_real(spec)
    }
}

/// Noise level giving the requested blurred signal-to-noise ratio:
/// `σ² = Var(Hx) · 10^(-bsnr/10)` with the empirical pixel variance.
pub fn sigma_from_bsnr(blurred: &Image, bsnr_db: f64) -> Result<f64> {
    let var = blurred.variance();
    // FFT round-off leaves ~1e-16 relative ripple on a blurred constant
    let floor = 1e-12 * blurred.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(var > floor * floor) {
        return Err(Error::Degenerate(
            "blurred image has zero variance; BSNR is undefined".into(),
        ));
    }
    if !bsnr_db.is_finite() {
        return Err(Error::invalid("BSNR must be finite"));
    }
    Ok((var * 10f64.powf(-bsnr_db / 10.0)).sqrt())
}

/// Draw `y = Hx + w`, `w ~ N(0, σ² I)`.
pub fn sample_observation<R: Rng + ?Sized>(
    x: &Image,
    m: &ObservationModel,
    rng: &mut R,
) -> Result<Image> {
    let op = m.operator(x.shape())?;
    Ok(observe_with(&op, x, rng))
}

pub(crate) fn observe_with<R: Rng + ?Sized>(op: &BlurOperator, x: &Image, rng: &mut R) -> Image {
    let mut y = op.apply(x);
    for v in y.as_mut_slice() {
        *v += op.sigma * rng.sample::<f64, _>(StandardNormal);
    }
    y
}
