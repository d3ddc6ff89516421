use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::fft::white_noise_spectrum;
use crate::image::{Image, Shape};
use crate::observation::{BlurOperator, ObservationModel};
use crate::priors::{GmrfOperator, GmrfPrior};
use crate::rng::SeedPath;

use super::{check_finite, ChainConfig, ChainOutput, PosteriorSampler};

/// Gamma hyperpriors (shape, rate) on the prior precision `δ` and the noise
/// precision `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsHyperPriors {
    pub a_delta: f64,
    pub b_delta: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
}

impl Default for GibbsHyperPriors {
    fn default() -> Self {
        Self {
            a_delta: 1e-3,
            b_delta: 1e-3,
            a_gamma: 1e-3,
            b_gamma: 1e-3,
        }
    }
}

impl GibbsHyperPriors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_delta, self.b_delta, self.a_gamma, self.b_gamma];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("gamma hyperprior parameters must be positive, got {all:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsOptions {
    pub update_delta: bool,
    pub update_gamma: bool,
    /// Initial noise precision; `None` means `1/σ²` of the observation model.
    pub gamma0: Option<f64>,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            update_delta: true,
            update_gamma: true,
            gamma0: None,
        }
    }
}

/// `δ | x ~ Gamma(a_δ + n/2, rate = b_δ + ⟨x,(L+rI)x⟩/2)`.
pub fn draw_delta<R: Rng + ?Sized>(x: &Image, prior: &GmrfOperator, h: &GibbsHyperPriors, rng: &mut R) -> Result<f64> {
    draw_gamma(h.a_delta + 0.5 * x.len() as f64, h.b_delta + 0.5 * prior.quadratic_form(x), rng)
}

/// One `Gamma(shape, rate)` draw.
pub fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::invalid(format!("gamma(shape {shape}, rate {rate}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Hierarchical GMRF deblurring by Gibbs sampling; the image update is an
/// exact Gaussian draw, independent per Fourier mode.
///
/// One emitted step is one full sweep, so the step size of the chain
/// configuration is unused.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    op: BlurOperator,
    prior: GmrfOperator,
    hyper: GibbsHyperPriors,
    opts: GibbsOptions,
    cfg: ChainConfig,
}

impl GibbsSampler {
    pub fn new(
        model: &ObservationModel,
        shape: Shape,
        prior: &GmrfPrior,
        hyper: GibbsHyperPriors,
        opts: GibbsOptions,
        cfg: ChainConfig,
    ) -> Result<Self> {
        hyper.validate()?;
        cfg.validate()?;
        if let Some(g) = opts.gamma0 {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("gamma0 must be positive, got {g}")));
            }
        }
        Ok(Self {
            op: model.operator(shape)?,
            prior: prior.operator(shape),
            hyper,
            opts,
            cfg,
        })
    }

    fn draw_image<R: Rng + ?Sized>(&self, y_spec: &[Complex64], delta: f64, gamma: f64, rng: &mut R) -> Image {
        let fft = self.op.fft();
        let mut spec = white_noise_spectrum(fft, rng);
        for (k, z) in spec.iter_mut().enumerate() {
            let h = self.op.transfer()[k];
            let q = gamma * h.norm_sqr() + delta * self.prior.spectrum()[k];
            *z = (h.conj() * y_spec[k] * gamma) / q + *z / q.sqrt();
        }
        fft.inverse_real(spec)
    }
}

impl PosteriorSampler for GibbsSampler {
    fn name(&self) -> &str {
        "gibbs-gmrf"
    }

    fn shape(&self) -> Shape {
        self.op.shape()
    }

    fn has_log_density(&self) -> bool {
        false
    }

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        y.check_shape(self.op.shape())?;
        let start = Instant::now();
        let mut rng = stream.rng();
        let y_spec = self.op.fft().forward_image(y);
        let mut delta = self.prior.delta();
        let sigma = self.op.sigma();
        let mut gamma = self.opts.gamma0.unwrap_or(1.0 / (sigma * sigma));
        let n = y.len() as f64;
        let mut out = ChainOutput::new(y.shape(), self.cfg.n_samples, false);
        let mut deltas = Vec::with_capacity(self.cfg.total_steps());
        let mut gammas = Vec::with_capacity(self.cfg.total_steps());
        for k in 0..self.cfg.total_steps() {
            let x = self.draw_image(&y_spec, delta, gamma, &mut rng);
            check_finite(&x, k)?;
            if self.opts.update_delta {
                delta = draw_delta(&x, &self.prior, &self.hyper, &mut rng)?;
            }
            if self.opts.update_gamma {
                let residual = y.sub(&self.op.apply(&x)).norm_sq();
                gamma = draw_gamma(self.hyper.a_gamma + 0.5 * n, self.hyper.b_gamma + 0.5 * residual, &mut rng)?;
            }
            deltas.push(delta);
            gammas.push(gamma);
            if self.cfg.emits(k) {
                out.emit(x, None);
            }
        }
        out.traces.insert("delta".into(), deltas);
        out.traces.insert("gamma".into(), gammas);
        out.wall_time = start.elapsed();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::oracle::{analytic_posterior, GaussianPrior};

    fn frozen() -> GibbsOptions {
        GibbsOptions {
            update_delta: false,
            update_gamma: false,
            gamma0: None,
        }
    }

    #[test]
    fn frozen_hyperparameters_give_exact_posterior() {
        let shape = Shape::new(8, 8);
        let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.05).unwrap();
        let gmrf = GmrfPrior::new(20.0, 1e-2).unwrap();
        let truth = GaussianPrior::smooth(shape, 0.5, 0.05).unwrap().draw(&mut SeedPath::new(1).rng());
        let y = crate::observation::sample_observation(&truth, &model, &mut SeedPath::new(2).rng()).unwrap();
        let s = GibbsSampler::new(&model, shape, &gmrf, GibbsHyperPriors::default(), frozen(), ChainConfig::new(1.0, 0, 20_000))
            .unwrap();
        let out = s.sample(&y, &SeedPath::new(3)).unwrap();
        // same model as a GaussianPrior with mode variances 1/(δ(ℓ+r))
        let spectrum = gmrf.operator(shape).spectrum().iter().map(|l| 1.0 / (20.0 * l)).collect();
        let exact = analytic_posterior(&y, &GaussianPrior::new(Image::zeros(shape), spectrum).unwrap(), &model).unwrap();
        assert!(out.mean().distance(exact.mean()) / exact.mean().norm() < 0.01);
        let var = out.moments.variance().mean();
        assert!((var / exact.pixel_variance() - 1.0).abs() < 0.03);
    }

    #[test]
    fn huge_noise_precision_returns_observation() {
        let shape = Shape::new(4, 4);
        let model = ObservationModel::new(Kernel::identity(), 1.0).unwrap();
        let y = GaussianPrior::isotropic(shape, 0.0, 1.0).unwrap().draw(&mut SeedPath::new(1).rng());
        let opts = GibbsOptions {
            gamma0: Some(1e12),
            ..frozen()
        };
        let s = GibbsSampler::new(&model, shape, &GmrfPrior::new(1.0, 1e-5).unwrap(), GibbsHyperPriors::default(), opts, ChainConfig::new(1.0, 0, 50))
            .unwrap();
        assert!(s.sample(&y, &SeedPath::new(2)).unwrap().mean().max_abs_diff(&y) < 1e-4);
    }

    #[test]
    fn delta_conditional_mean() {
        let shape = Shape::new(8, 8);
        let op = GmrfPrior::new(1.0, 1e-5).unwrap().operator(shape);
        let x = GaussianPrior::smooth(shape, 0.0, 1.0).unwrap().draw(&mut SeedPath::new(5).rng());
        let h = GibbsHyperPriors {
            a_delta: 2.0,
            b_delta: 0.5,
            ..Default::default()
        };
        let mut rng = SeedPath::new(6).rng();
        let draws = 100_000;
        let mean = (0..draws).map(|_| draw_delta(&x, &op, &h, &mut rng).unwrap()).sum::<f64>() / draws as f64;
        let expected = (2.0 + 32.0) / (0.5 + 0.5 * op.quadratic_form(&x));
        assert!((mean / expected - 1.0).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn traces_and_determinism() {
        let shape = Shape::new(8, 8);
        let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.05).unwrap();
        let y = GaussianPrior::smooth(shape, 0.5, 0.05).unwrap().draw(&mut SeedPath::new(1).rng());
        let s = GibbsSampler::new(&model, shape, &GmrfPrior::new(1.0, 1e-5).unwrap(), GibbsHyperPriors::default(), GibbsOptions::default(), ChainConfig::new(1.0, 20, 30))
            .unwrap();
        let a = s.sample(&y, &SeedPath::new(9)).unwrap();
        let b = s.sample(&y, &SeedPath::new(9)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.traces["delta"].len(), 50);
        assert!(a.traces["gamma"].iter().all(|g| *g > 0.0));
    }
}
