//! Gaussian denoisers and the Tweedie score approximation
//! `∇ log p_ε(x) ≈ (D_ε(x) − x) / ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::image::Image;
use crate::kernel::Kernel;
use crate::protocol::{Client, Endpoint};

/// A denoiser trained for additive Gaussian noise of variance `epsilon()`.
pub trait Denoiser: Send {
    fn epsilon(&self) -> f64;
    fn denoise(&mut self, x: &Image) -> Result<Image>;
}

/// `(D_ε(x) − x) / ε`.
pub fn tweedie_score(x: &Image, d: &mut dyn Denoiser) -> Result<Image> {
    let denoised = d.denoise(x)?;
    if denoised.shape() != x.shape() {
        return Err(Error::Protocol(format!(
            "denoiser changed shape {} -> {}",
            x.shape(),
            denoised.shape()
        )));
    }
    Ok(denoised.sub(x).scale(1.0 / d.epsilon()))
}

/// MMSE denoiser for the prior `N(0, prior_var·I)`: `D(x) = s²/(s²+ε)·x`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianMmse {
    pub prior_var: f64,
    pub epsilon: f64,
}

impl Denoiser for GaussianMmse {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn denoise(&mut self, x: &Image) -> Result<Image> {
        Ok(x.scale(self.prior_var / (self.prior_var + self.epsilon)))
    }
}

/// Fixed low-pass filter, normalised to unit DC gain.
#[derive(Debug, Clone)]
pub struct Smoothing {
    kernel: Kernel,
    epsilon: f64,
    plan: Option<(Fft2d, Vec<num_complex::Complex64>)>,
}

impl Smoothing {
    pub fn new(kernel: Kernel, epsilon: f64) -> Result<Self> {
        let sum = kernel.sum();
        if sum.abs() < 1e-12 {
            return Err(Error::invalid("smoothing kernel must have non-zero sum"));
        }
        let taps = kernel.taps().iter().map(|t| t / sum).collect();
        Ok(Self {
            kernel: Kernel::new(kernel.height(), kernel.width(), taps)?,
            epsilon,
            plan: None,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
}

impl Denoiser for Smoothing {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn denoise(&mut self, x: &Image) -> Result<Image> {
        let stale = self
            .plan
            .as_ref()
            .is_none_or(|(fft, _)| fft.shape() != x.shape());
        if stale {
            let fft = Fft2d::new(x.shape());
            let transfer = self.kernel.transfer(&fft);
            self.plan = Some((fft, transfer));
        }
        let (fft, transfer) = self.plan.as_ref().unwrap();
        Ok(fft.apply_multiplier(x, transfer))
    }
}

struct ExternalDenoiser {
    client: Client,
    epsilon: f64,
}

impl Denoiser for ExternalDenoiser {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn denoise(&mut self, x: &Image) -> Result<Image> {
        self.client.denoise(x)
    }
}

/// Which denoiser a plug-and-play sampler uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DenoiserSpec {
    BuiltinGaussianMmse { prior_var: f64, epsilon: f64 },
    BuiltinSmoothing { kernel_size: usize, epsilon: f64 },
    External { endpoint: String, epsilon: f64 },
}

impl DenoiserSpec {
    pub fn epsilon(&self) -> f64 {
        match self {
            DenoiserSpec::BuiltinGaussianMmse { epsilon, .. }
            | DenoiserSpec::BuiltinSmoothing { epsilon, .. }
            | DenoiserSpec::External { epsilon, .. } => *epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.epsilon();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("denoiser epsilon must be positive, got {eps}")));
        }
        match self {
            DenoiserSpec::BuiltinGaussianMmse { prior_var, .. } if !(*prior_var > 0.0) => Err(
                Error::invalid(format!("prior variance must be positive, got {prior_var}")),
            ),
            DenoiserSpec::BuiltinSmoothing { kernel_size, .. } if kernel_size % 2 == 0 => Err(
                Error::invalid(format!("smoothing kernel size must be odd, got {kernel_size}")),
            ),
            DenoiserSpec::External { endpoint, .. } => endpoint.parse::<Endpoint>().map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Instantiate; external denoisers open a fresh connection.
    pub fn connect(&self) -> Result<Box<dyn Denoiser>> {
        self.validate()?;
        Ok(match self {
            DenoiserSpec::BuiltinGaussianMmse { prior_var, epsilon } => Box::new(GaussianMmse {
                prior_var: *prior_var,
                epsilon: *epsilon,
            }),
            DenoiserSpec::BuiltinSmoothing {
                kernel_size,
                epsilon,
            } => Box::new(Smoothing::new(Kernel::uniform(*kernel_size)?, *epsilon)?),
            DenoiserSpec::External { endpoint, epsilon } => Box::new(ExternalDenoiser {
                client: Client::connect(&endpoint.parse()?)?,
                epsilon: *epsilon,
            }),
        })
    }
}
