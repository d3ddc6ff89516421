use crate::error::{Error, Result};
use crate::fft::{laplacian_spectrum, Fft2d};
use crate::image::{Image, Shape};

/// Spectral floor added to the Laplacian so the prior is proper.
pub const DEFAULT_DC_RIDGE: f64 = 1e-5;

/// Stationary Gaussian Markov random field with precision
/// `delta · (L + dc_ridge·I)`, `L` the periodic 5-point Laplacian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmrfPrior {
    pub delta: f64,
    pub dc_ridge: f64,
}

impl GmrfPrior {
    pub fn new(delta: f64, dc_ridge: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        if !(dc_ridge > 0.0 && dc_ridge.is_finite()) {
            return Err(Error::invalid(format!(
                "dc_ridge must be positive, got {dc_ridge}"
            )));
        }
        Ok(Self { delta, dc_ridge })
    }

    pub fn operator(&self, shape: Shape) -> GmrfOperator {
        let fft = Fft2d::new(shape);
        let spectrum = laplacian_spectrum(shape)
            .into_iter()
            .map(|l| l + self.dc_ridge)
            .collect();
        GmrfOperator {
            fft,
            spectrum,
            delta: self.delta,
        }
    }
}

/// A [`GmrfPrior`] bound to an image grid.
#[derive(Debug, Clone)]
pub struct GmrfOperator {
    fft: Fft2d,
    spectrum: Vec<f64>,
    delta: f64,
}

impl GmrfOperator {
    /// Eigenvalues of `L + dc_ridge·I` in FFT layout (without `delta`).
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self {
            delta,
            ..self.clone()
        }
    }

    /// `⟨x, (L + rI) x⟩` via Parseval.
    pub fn quadratic_form(&self, x: &Image) -> f64 {
        let spec = self.fft.forward_image(x);
        let n = x.len() as f64;
        spec.iter()
            .zip(&self.spectrum)
            .map(|(s, l)| l * s.norm_sqr())
            .sum::<f64>()
            / n
    }

    /// `(delta/2)·⟨x, (L + rI) x⟩`.
    pub fn potential(&self, x: &Image) -> f64 {
        0.5 * self.delta * self.quadratic_form(x)
    }

    /// `delta·(L + rI) x`.
    pub fn gradient(&self, x: &Image) -> Image {
        let scaled: Vec<f64> = self.spectrum.iter().map(|l| self.delta * l).collect();
        self.fft.apply_real_multiplier(x, &scaled)
    }

    pub fn lipschitz(&self) -> f64 {
        self.delta * self.spectrum.iter().cloned().fold(0.0, f64::max)
    }
}
