//! Conjugate-Gaussian references.
//!
//! With a Gaussian prior whose covariance is circulant and a circulant blur,
//! the posterior diagonalises in the Fourier basis. That gives exact
//! posteriors, exact samplers, and brute-force coverage values against which
//! the approximate samplers and the audit itself can be checked.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::regions::RegionKind;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fft::{conjugate_index, laplacian_spectrum, white_noise_spectrum, Fft2d};
use crate::image::{Image, Shape};
use crate::observation::{observe_with, ObservationModel};
use crate::regions::{ball_radii, hpd_thresholds};
use crate::rng::SeedPath;

/// Gaussian prior with mean image and per-mode variances (FFT layout).
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Image,
    spectrum: Vec<f64>,
    fft: Fft2d,
}

impl GaussianPrior {
    pub fn new(mean: Image, spectrum: Vec<f64>) -> Result<Self> {
        let shape = mean.shape();
        if spectrum.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} mode variances", shape.len()),
                actual: spectrum.len().to_string(),
            });
        }
        if spectrum.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("prior mode variances must be positive and finite"));
        }
        for (i, s) in spectrum.iter().enumerate() {
            let j = conjugate_index(shape, i);
            if (s - spectrum[j]).abs() > 1e-12 * s.abs() {
                return Err(Error::invalid(
                    "prior spectrum must be symmetric under k -> -k for a real field",
                ));
            }
        }
        Ok(Self {
            mean,
            spectrum,
            fft: Fft2d::new(shape),
        })
    }

    /// `N(mean·1, variance·I)`.
    pub fn isotropic(shape: Shape, mean: f64, variance: f64) -> Result<Self> {
        Self::new(Image::constant(shape, mean), vec![variance; shape.len()])
    }

    /// Smooth stationary field with mode variances `scale / (0.1 + ℓ_k)`,
    /// `ℓ_k` the periodic Laplacian eigenvalues.
    pub fn smooth(shape: Shape, mean: f64, scale: f64) -> Result<Self> {
        let spectrum = laplacian_spectrum(shape)
            .into_iter()
            .map(|l| scale / (0.1 + l))
            .collect();
        Self::new(Image::constant(shape, mean), spectrum)
    }

    /// Same mean, every mode variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.mean.clone(),
            self.spectrum.iter().map(|s| s * factor).collect(),
        )
    }

    pub fn shape(&self) -> Shape {
        self.mean.shape()
    }

    pub fn mean(&self) -> &Image {
        &self.mean
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Image {
        let mut spec = white_noise_spectrum(&self.fft, rng);
        for (z, s) in spec.iter_mut().zip(&self.spectrum) {
            *z *= s.sqrt();
        }
        self.fft.inverse_real(spec).add(&self.mean)
    }

    /// `log p(x)` up to a constant: `-½ (x−μ)ᵀ Σ⁻¹ (x−μ)`.
    pub fn log_density(&self, x: &Image) -> f64 {
        let spec = self.fft.forward_image(&x.sub(&self.mean));
        let n = x.len() as f64;
        -0.5 * spec
            .iter()
            .zip(&self.spectrum)
            .map(|(z, s)| z.norm_sqr() / s)
            .sum::<f64>()
            / n
    }

    /// Synthetic ground-truth set of `count` i.i.d. draws.
    pub fn draw_dataset(&self, count: usize, stream: &SeedPath) -> Result<Dataset> {
        let items = (0..count)
            .map(|i| self.draw(&mut stream.child(i as u64).rng()))
            .collect();
        Dataset::unlabeled(items)
    }
}

/// Exact posterior of a [`GaussianPrior`] under a circulant observation model.
#[derive(Debug, Clone)]
pub struct AnalyticPosterior {
    mean: Image,
    mode_variance: Vec<f64>,
    fft: Fft2d,
}

impl AnalyticPosterior {
    pub fn mean(&self) -> &Image {
        &self.mean
    }

    /// Posterior variance of each Fourier mode, in the same normalisation as
    /// [`GaussianPrior::spectrum`].
    pub fn mode_variance(&self) -> &[f64] {
        &self.mode_variance
    }

    /// Marginal variance of every pixel (the posterior is stationary).
    pub fn pixel_variance(&self) -> f64 {
        self.mode_variance.iter().sum::<f64>() / self.mode_variance.len() as f64
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Image {
        let mut spec = white_noise_spectrum(&self.fft, rng);
        for (z, v) in spec.iter_mut().zip(&self.mode_variance) {
            *z *= v.sqrt();
        }
        self.fft.inverse_real(spec).add(&self.mean)
    }

    /// `log p(x|y)` up to a constant.
    pub fn log_density(&self, x: &Image) -> f64 {
        let spec = self.fft.forward_image(&x.sub(&self.mean));
        let n = x.len() as f64;
        -0.5 * spec
            .iter()
            .zip(&self.mode_variance)
            .map(|(z, v)| z.norm_sqr() / v)
            .sum::<f64>()
            / n
    }
}

/// Mode-wise conjugate update:
/// `v_k = (|ĥ_k|²/σ² + 1/s_k)⁻¹`, `m̂_k = v_k (ĥ_k* ŷ_k/σ² + μ̂_k/s_k)`.
pub fn analytic_posterior(
    y: &Image,
    prior: &GaussianPrior,
    m: &ObservationModel,
) -> Result<AnalyticPosterior> {
    y.check_shape(prior.shape())?;
    let op = m.operator(y.shape())?;
    let inv_var = 1.0 / (m.noise_sigma * m.noise_sigma);
    let fft = op.fft().clone();
    let ys = fft.forward_image(y);
    let mus = fft.forward_image(&prior.mean);
    let mut mode_variance = Vec::with_capacity(y.len());
    let mut mean_spec: Vec<Complex64> = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        let h = op.transfer()[k];
        let s = prior.spectrum[k];
        let v = 1.0 / (h.norm_sqr() * inv_var + 1.0 / s);
        mode_variance.push(v);
        mean_spec.push((h.conj() * ys[k] * inv_var + mus[k] / s) * v);
    }
    Ok(AnalyticPosterior {
        mean: fft.inverse_real(mean_spec),
        mode_variance,
        fft,
    })
}

/// Monte Carlo estimate of `E_y P[x ∈ C_α^y | y]`: draw `(x*, y)` from the
/// true joint, build the region from `posterior_samples` exact draws of the
/// assumed posterior, and average membership of `x*` over `draws`
/// replications.
#[allow(clippy::too_many_arguments)]
pub fn brute_coverage(
    true_prior: &GaussianPrior,
    assumed_prior: &GaussianPrior,
    m: &ObservationModel,
    alpha: f64,
    kind: RegionKind,
    draws: usize,
    posterior_samples: usize,
    seed: u64,
) -> Result<f64> {
    if draws < 1000 {
        return Err(Error::invalid(format!("brute_coverage needs at least 1000 draws, got {draws}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if posterior_samples < 2 {
        return Err(Error::invalid("need at least two posterior samples per region"));
    }
    if true_prior.shape() != assumed_prior.shape() {
        return Err(Error::DimensionMismatch {
            expected: true_prior.shape().to_string(),
            actual: assumed_prior.shape().to_string(),
        });
    }
    let op = m.operator(true_prior.shape())?;
    let root = SeedPath::new(seed);
    let hits = (0..draws)
        .into_par_iter()
        .map(|j| -> Result<usize> {
            let stream = root.child(j as u64);
            let truth = true_prior.draw(&mut stream.child(0).rng());
            let y = observe_with(&op, &truth, &mut stream.child(1).rng());
            let post = analytic_posterior(&y, assumed_prior, m)?;
            let mut rng = stream.child(2).rng();
            let samples: Vec<Image> = (0..posterior_samples).map(|_| post.draw(&mut rng)).collect();
            let inside = match kind {
                RegionKind::Ball => {
                    let (center, radii) = ball_radii(&samples, &[alpha])?;
                    truth.distance(&center) <= radii[0]
                }
                RegionKind::Hpd => {
                    let logd: Vec<f64> = samples.iter().map(|s| post.log_density(s)).collect();
                    post.log_density(&truth) >= hpd_thresholds(&logd, &[alpha])?[0]
                }
            };
            Ok(inside as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / draws as f64)
}
