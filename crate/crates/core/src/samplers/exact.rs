use std::sync::Arc;
use std::time::Instant;

use crate::error::Result;
use crate::image::{Image, Shape};
use crate::observation::ObservationModel;
use crate::oracle::{analytic_posterior, GaussianPrior};
use crate::rng::SeedPath;

use super::{ChainConfig, ChainOutput, PosteriorSampler};

/// I.i.d. draws from the conjugate posterior of a [`GaussianPrior`].
///
/// Burn-in, thinning, and step size are irrelevant for independent draws
/// and are ignored; exactly `n_samples` draws are emitted.
#[derive(Debug, Clone)]
pub struct ExactGaussianSampler {
    prior: GaussianPrior,
    model: ObservationModel,
    n_samples: usize,
}

impl ExactGaussianSampler {
    pub fn new(prior: GaussianPrior, model: ObservationModel, cfg: &ChainConfig) -> Result<Self> {
        cfg.validate()?;
        model.operator(prior.shape())?;
        Ok(Self {
            prior,
            model,
            n_samples: cfg.n_samples,
        })
    }
}

impl PosteriorSampler for ExactGaussianSampler {
    fn name(&self) -> &str {
        "exact-gaussian"
    }

    fn shape(&self) -> Shape {
        self.prior.shape()
    }

    fn has_log_density(&self) -> bool {
        true
    }

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        let start = Instant::now();
        let post = Arc::new(analytic_posterior(y, &self.prior, &self.model)?);
        let mut rng = stream.rng();
        let mut out = ChainOutput::new(y.shape(), self.n_samples, true);
        for _ in 0..self.n_samples {
            let x = post.draw(&mut rng);
            let u = post.log_density(&x);
            out.emit(x, Some(u));
        }
        out.evaluator = Some(Arc::new(move |x: &Image| post.log_density(x)));
        out.wall_time = start.elapsed();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::Fft2d;
    use crate::kernel::Kernel;

    #[test]
    fn identity_blur_scalar_conjugacy() {
        let shape = Shape::new(4, 4);
        let (s2, sigma) = (0.5, 0.3);
        let model = ObservationModel::new(Kernel::identity(), sigma).unwrap();
        let s = ExactGaussianSampler::new(GaussianPrior::isotropic(shape, 0.0, s2).unwrap(), model, &ChainConfig::new(1.0, 0, 50_000))
            .unwrap();
        let y = Image::from_fn(shape, |r, c| (r * 4 + c) as f64 / 16.0);
        let out = s.sample(&y, &SeedPath::new(1)).unwrap();
        let expected = y.scale(s2 / (s2 + sigma * sigma));
        let v = s2 * sigma * sigma / (s2 + sigma * sigma);
        // 4-sigma Monte Carlo band per pixel
        assert!(out.mean().max_abs_diff(&expected) < 4.0 * (v / 50_000.0).sqrt());
    }

    #[test]
    fn mode_covariance_matches_analytic() {
        let shape = Shape::new(8, 8);
        let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.1).unwrap();
        let prior = GaussianPrior::smooth(shape, 0.2, 0.1).unwrap();
        let draws = 100_000;
        let s = ExactGaussianSampler::new(prior.clone(), model.clone(), &ChainConfig::new(1.0, 0, draws)).unwrap();
        let y = prior.draw(&mut SeedPath::new(2).rng());
        let out = s.sample(&y, &SeedPath::new(3)).unwrap();
        let post = analytic_posterior(&y, &prior, &model).unwrap();
        let fft = Fft2d::new(shape);
        let n = shape.len() as f64;
        let mut power = vec![0.0; shape.len()];
        for x in &out.samples {
            for (p, z) in power.iter_mut().zip(fft.forward_image(&x.sub(post.mean()))) {
                *p += z.norm_sqr() / n / draws as f64;
            }
        }
        for (p, v) in power.iter().zip(post.mode_variance()) {
            assert!((p / v - 1.0).abs() < 0.03, "{p} vs {v}");
        }
    }

    #[test]
    fn potentials_differ_like_direct_recomputation() {
        let shape = Shape::new(4, 4);
        let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.2).unwrap();
        let prior = GaussianPrior::smooth(shape, 0.0, 0.3).unwrap();
        let s = ExactGaussianSampler::new(prior.clone(), model.clone(), &ChainConfig::new(1.0, 0, 10)).unwrap();
        let y = prior.draw(&mut SeedPath::new(4).rng());
        let out = s.sample(&y, &SeedPath::new(5)).unwrap();
        let op = model.operator(shape).unwrap();
        let u = |x: &Image| op.log_likelihood(&y, x) + prior.log_density(x);
        let values = out.log_density.unwrap();
        for (v, x) in values.iter().zip(&out.samples) {
            let lhs = v - values[0];
            let rhs = u(x) - u(&out.samples[0]);
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
        }
    }
}
