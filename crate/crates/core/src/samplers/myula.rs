use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::observation::{BlurOperator, ObservationModel};
use crate::priors::{ProxPotential, ProxState};
use crate::rng::{SeedPath, Stream};

use super::{ula_chain, ChainConfig, ChainOutput, LogDensity, PosteriorSampler};

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("theta must be positive, got {theta}")))
    }
}

/// `U_y(x) = log p(y|x) − φ(x)` with the unsmoothed potential.
pub(crate) fn posterior_evaluator<P: ProxPotential + Clone + 'static>(
    op: &BlurOperator,
    y: &Image,
    prior: &P,
) -> Arc<dyn LogDensity> {
    let (op, y, prior) = (op.clone(), y.clone(), prior.clone());
    Arc::new(move |x: &Image| op.log_likelihood(&y, x) - prior.potential(x))
}

/// ULA on the Moreau–Yosida envelope of the prior, started at `y`.
///
/// Drift: `∇log p(y|x) + (prox_θφ(x) − x)/θ`. The prox solver is warm-started
/// from the previous iterate's dual. Potentials use the unsmoothed `φ`.
pub fn myula_chain<P: ProxPotential + Clone + 'static>(
    y: &Image,
    op: &BlurOperator,
    prior: &P,
    theta: f64,
    cfg: &ChainConfig,
    rng: &mut Stream,
) -> Result<ChainOutput> {
    myula_from(y.clone(), y, op, prior, theta, cfg, rng)
}

pub(crate) fn myula_from<P: ProxPotential + Clone + 'static>(
    x0: Image,
    y: &Image,
    op: &BlurOperator,
    prior: &P,
    theta: f64,
    cfg: &ChainConfig,
    rng: &mut Stream,
) -> Result<ChainOutput> {
    check_theta(theta)?;
    y.check_shape(op.shape())?;
    cfg.check_step("myula", op.lipschitz() + 1.0 / theta)?;
    let evaluator = posterior_evaluator(op, y, prior);
    let mut state = ProxState::default();
    let mut not_converged = 0;
    let drift = |x: &Image| {
        let p = prior.prox_with_state(x, theta, &mut state);
        not_converged += usize::from(!p.converged);
        let mut g = op.log_likelihood_grad(y, x);
        g.axpy(1.0 / theta, &p.image.sub(x));
        Ok(g)
    };
    let eval = evaluator.clone();
    let mut out = ula_chain(drift, x0, cfg, rng, Some(&|x: &Image| eval.log_density(x)))?;
    out.warnings.prox_not_converged = not_converged;
    out.evaluator = Some(evaluator);
    Ok(out)
}

/// MYULA with a fixed prior.
#[derive(Debug, Clone)]
pub struct MyulaSampler<P> {
    op: BlurOperator,
    prior: P,
    theta: f64,
    cfg: ChainConfig,
}

impl<P: ProxPotential + Clone + 'static> MyulaSampler<P> {
    pub fn new(model: &ObservationModel, shape: Shape, prior: P, theta: f64, cfg: ChainConfig) -> Result<Self> {
        check_theta(theta)?;
        let op = model.operator(shape)?;
        cfg.check_step("myula", op.lipschitz() + 1.0 / theta)?;
        Ok(Self { op, prior, theta, cfg })
    }
}

impl<P: ProxPotential + Clone + 'static> PosteriorSampler for MyulaSampler<P> {
    fn name(&self) -> &str {
        "myula"
    }

    fn shape(&self) -> Shape {
        self.op.shape()
    }

    fn has_log_density(&self) -> bool {
        true
    }

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        myula_chain(y, &self.op, &self.prior, self.theta, &self.cfg, &mut stream.rng())
    }
}
