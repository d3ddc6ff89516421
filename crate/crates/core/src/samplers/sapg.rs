use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::observation::{BlurOperator, ObservationModel};
use crate::priors::{HomogeneousPotential, ProxState, TvPotential};
use crate::rng::{SeedPath, Stream};

use super::myula::{check_theta, myula_from};
use super::{check_finite, ChainConfig, ChainOutput, PosteriorSampler};

/// Stochastic-approximation settings for the regularisation weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SapgOptions {
    /// Moreau–Yosida smoothing parameter of the inner chain.
    pub theta: f64,
    /// Langevin step of the inner chain.
    pub step_size: f64,
    pub n_iter: usize,
    pub lambda_bounds: (f64, f64),
    /// Starting weight; `None` uses the plug-in `n / (k·g(y))`.
    pub lambda0: Option<f64>,
    /// Scale `c` of `γ_k = c·k^(-exponent)`; `None` means `10/n`.
    pub gain: Option<f64>,
    pub exponent: f64,
    /// Fraction of final iterations averaged into `λ̂`.
    pub average_fraction: f64,
}

impl SapgOptions {
    pub fn new(theta: f64, step_size: f64, n_iter: usize) -> Self {
        Self {
            theta,
            step_size,
            n_iter,
            lambda_bounds: (1e-3, 1e3),
            lambda0: None,
            gain: None,
            exponent: 0.8,
            average_fraction: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        let (lo, hi) = self.lambda_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        if self.n_iter == 0 {
            return Err(Error::invalid("SAPG needs at least one iteration"));
        }
        if !(self.average_fraction > 0.0 && self.average_fraction <= 1.0) {
            return Err(Error::invalid("average_fraction must lie in (0, 1]"));
        }
        if let Some(l) = self.lambda0 {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda0 must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SapgOutput {
    pub lambda_hat: f64,
    pub trace: Vec<f64>,
    /// `λ` sat on a bound for the whole averaging window.
    pub boundary: bool,
    pub last: Image,
    pub prox_not_converged: usize,
}

/// Maximum marginal likelihood estimate of the weight of a homogeneous prior
/// `λ·g(x)`, interleaving MYULA steps with
/// `λ ← Proj(λ + γ_k (n/(k_deg·λ) − g(x)))`.
pub fn sapg<P: HomogeneousPotential>(
    y: &Image,
    op: &BlurOperator,
    prior: &P,
    opts: &SapgOptions,
    rng: &mut Stream,
) -> Result<SapgOutput> {
    opts.validate()?;
    y.check_shape(op.shape())?;
    let check = ChainConfig::new(opts.step_size, 0, 1);
    check.check_step("sapg", op.lipschitz() + 1.0 / opts.theta)?;

    let n = y.len() as f64;
    let degree = prior.degree();
    let (lo, hi) = opts.lambda_bounds;
    let gain = opts.gain.unwrap_or(10.0 / n);
    let mut lambda = opts
        .lambda0
        .unwrap_or_else(|| n / (degree * prior.functional(y).max(f64::MIN_POSITIVE)))
        .clamp(lo, hi);
    let (theta, delta) = (opts.theta, opts.step_size);
    let noise_scale = (2.0 * delta).sqrt();
    let mut state = ProxState::default();
    let mut not_converged = 0;
    let mut x = y.clone();
    let mut trace = Vec::with_capacity(opts.n_iter);
    for k in 1..=opts.n_iter {
        let p = prior.with_weight(lambda).prox_with_state(&x, theta, &mut state);
        not_converged += usize::from(!p.converged);
        let mut g = op.log_likelihood_grad(y, &x);
        g.axpy(1.0 / theta, &p.image.sub(&x));
        x.axpy(delta, &g);
        for v in x.as_mut_slice() {
            *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        check_finite(&x, k - 1)?;
        let step = gain * (k as f64).powf(-opts.exponent);
        lambda = (lambda + step * (n / (degree * lambda) - prior.functional(&x))).clamp(lo, hi);
        trace.push(lambda);
    }
    let window = ((opts.n_iter as f64 * opts.average_fraction).ceil() as usize).max(1);
    let tail = &trace[trace.len() - window..];
    let lambda_hat = tail.iter().sum::<f64>() / tail.len() as f64;
    let boundary = tail.iter().all(|&l| l == lo) || tail.iter().all(|&l| l == hi);
    if boundary {
        log::warn!("SAPG weight stayed on a bound ({lambda_hat}) for the whole averaging window");
    }
    Ok(SapgOutput {
        lambda_hat,
        trace,
        boundary,
        last: x,
        prox_not_converged: not_converged,
    })
}

/// Empirical-Bayes TV: SAPG for `λ`, then a MYULA chain at `λ̂`.
#[derive(Debug, Clone)]
pub struct TvSapgSampler {
    op: BlurOperator,
    prior: TvPotential,
    opts: SapgOptions,
    cfg: ChainConfig,
}

impl TvSapgSampler {
    pub fn new(
        model: &ObservationModel,
        shape: Shape,
        prior: TvPotential,
        opts: SapgOptions,
        cfg: ChainConfig,
    ) -> Result<Self> {
        opts.validate()?;
        let op = model.operator(shape)?;
        let lip = op.lipschitz() + 1.0 / opts.theta;
        cfg.check_step("tv-sapg", lip)?;
        ChainConfig::new(opts.step_size, 0, 1).check_step("sapg", lip)?;
        Ok(Self { op, prior, opts, cfg })
    }
}

impl PosteriorSampler for TvSapgSampler {
    fn name(&self) -> &str {
        "tv-sapg"
    }

    fn shape(&self) -> Shape {
        self.op.shape()
    }

    fn has_log_density(&self) -> bool {
        true
    }

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        let start = Instant::now();
        let fit = sapg(y, &self.op, &self.prior, &self.opts, &mut stream.child(0).rng())?;
        let prior = self.prior.with_weight(fit.lambda_hat);
        let mut out = myula_from(
            fit.last,
            y,
            &self.op,
            &prior,
            self.opts.theta,
            &self.cfg,
            &mut stream.child(1).rng(),
        )?;
        out.scalars.insert("lambda_hat".into(), fit.lambda_hat);
        out.traces.insert("lambda".into(), fit.trace);
        out.warnings.boundary_solution = fit.boundary;
        out.warnings.prox_not_converged += fit.prox_not_converged;
        out.wall_time = start.elapsed();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::oracle::GaussianPrior;
    use crate::priors::QuadraticPotential;

    fn quadratic_setup(seed: u64) -> (Image, BlurOperator, f64) {
        let shape = Shape::new(16, 16);
        let (lambda_star, sigma) = (2.0, 0.5);
        let model = ObservationModel::new(Kernel::identity(), sigma).unwrap();
        let truth = GaussianPrior::isotropic(shape, 0.0, 1.0 / lambda_star)
            .unwrap()
            .draw(&mut SeedPath::new(seed).rng());
        let y = crate::observation::sample_observation(&truth, &model, &mut SeedPath::new(seed).child(1).rng()).unwrap();
        let ml = 1.0 / (y.norm_sq() / y.len() as f64 - sigma * sigma).max(1e-6);
        (y, model.operator(shape).unwrap(), ml)
    }

    #[test]
    fn quadratic_recovers_marginal_likelihood_maximiser() {
        let (y, op, ml) = quadratic_setup(1);
        let theta = 1e-3;
        let opts = SapgOptions::new(theta, 0.9 / (op.lipschitz() + 1.0 / theta), 20_000);
        let fit = sapg(&y, &op, &QuadraticPotential::new(1.0).unwrap(), &opts, &mut SeedPath::new(9).rng()).unwrap();
        assert!(!fit.boundary);
        assert!((fit.lambda_hat / ml - 1.0).abs() < 0.10, "{} vs {ml}", fit.lambda_hat);
    }

    #[test]
    fn bound_pins_estimate_and_warns() {
        let (y, op, ml) = quadratic_setup(2);
        let theta = 1e-3;
        let mut opts = SapgOptions::new(theta, 0.9 / (op.lipschitz() + 1.0 / theta), 2000);
        opts.lambda_bounds = (10.0 * ml, 100.0 * ml);
        let fit = sapg(&y, &op, &QuadraticPotential::new(1.0).unwrap(), &opts, &mut SeedPath::new(3).rng()).unwrap();
        assert!(fit.boundary);
        assert!((fit.lambda_hat / (10.0 * ml) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_estimate_stable_across_seeds() {
        let shape = Shape::new(16, 16);
        let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.05).unwrap();
        let truth = GaussianPrior::smooth(shape, 0.5, 0.05)
            .unwrap()
            .draw(&mut SeedPath::new(4).rng());
        let y = crate::observation::sample_observation(&truth, &model, &mut SeedPath::new(5).rng()).unwrap();
        let op = model.operator(shape).unwrap();
        let theta = 0.01;
        let opts = SapgOptions::new(theta, 0.9 / (op.lipschitz() + 1.0 / theta), 3000);
        let prior = TvPotential::new(1.0).unwrap();
        let a = sapg(&y, &op, &prior, &opts, &mut SeedPath::new(1).rng()).unwrap();
        let b = sapg(&y, &op, &prior, &opts, &mut SeedPath::new(2).rng()).unwrap();
        assert!(!a.boundary && !b.boundary);
        assert!((a.lambda_hat / b.lambda_hat - 1.0).abs() < 0.05, "{} {}", a.lambda_hat, b.lambda_hat);
    }

    #[test]
    fn sampler_reports_lambda_hat() {
        let shape = Shape::new(8, 8);
        let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.1).unwrap();
        let op = model.operator(shape).unwrap();
        let theta = 0.02;
        let step = 0.9 / (op.lipschitz() + 1.0 / theta);
        let s = TvSapgSampler::new(
            &model,
            shape,
            TvPotential::new(1.0).unwrap(),
            SapgOptions::new(theta, step, 200),
            ChainConfig::new(step, 10, 20),
        )
        .unwrap();
        let y = GaussianPrior::smooth(shape, 0.5, 0.05).unwrap().draw(&mut SeedPath::new(1).rng());
        let out = s.sample(&y, &SeedPath::new(2)).unwrap();
        assert!(out.scalars["lambda_hat"] > 0.0);
        assert_eq!(out.traces["lambda"].len(), 200);
        assert_eq!(out.len(), 20);
    }
}
