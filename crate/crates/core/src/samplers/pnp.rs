use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::observation::{BlurOperator, ObservationModel};
use crate::priors::{tweedie_score, DenoiserSpec};
use crate::rng::SeedPath;

use super::{ula_chain, ChainConfig, ChainOutput, PosteriorSampler};

pub const DEFAULT_PROJ_BOX: (f64, f64) = (-0.5, 1.5);
pub const DEFAULT_PROJ_LAMBDA: f64 = 1.0;

/// `(Π_C(x) − x)/λ_proj` for the per-pixel box `C`.
pub(crate) fn projection_drift(x: &Image, (lo, hi): (f64, f64), lambda: f64) -> Image {
    x.map(|v| (v.clamp(lo, hi) - v) / lambda)
}

/// Plug-and-play ULA: the prior score comes from a Gaussian denoiser
/// through Tweedie's identity, and a soft projection keeps the chain on a
/// compact box. No prior potential exists, so only ball regions apply.
#[derive(Debug, Clone)]
pub struct PnpUlaSampler {
    op: BlurOperator,
    denoiser: DenoiserSpec,
    proj_box: (f64, f64),
    proj_lambda: f64,
    cfg: ChainConfig,
}

impl PnpUlaSampler {
    pub fn new(
        model: &ObservationModel,
        shape: Shape,
        denoiser: DenoiserSpec,
        proj_box: (f64, f64),
        proj_lambda: f64,
        cfg: ChainConfig,
    ) -> Result<Self> {
        denoiser.validate()?;
        let (lo, hi) = proj_box;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("projection box [{lo}, {hi}] is empty")));
        }
        if !(proj_lambda > 0.0 && proj_lambda.is_finite()) {
            return Err(Error::invalid(format!("projection lambda must be positive, got {proj_lambda}")));
        }
        let op = model.operator(shape)?;
        cfg.check_step("pnp-ula", op.lipschitz() + 1.0 / denoiser.epsilon() + 1.0 / proj_lambda)?;
        Ok(Self {
            op,
            denoiser,
            proj_box,
            proj_lambda,
            cfg,
        })
    }
}

impl PosteriorSampler for PnpUlaSampler {
    fn name(&self) -> &str {
        "pnp-ula"
    }

    fn shape(&self) -> Shape {
        self.op.shape()
    }

    fn has_log_density(&self) -> bool {
        false
    }

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        y.check_shape(self.op.shape())?;
        let mut denoiser = self.denoiser.connect()?;
        let drift = |x: &Image| {
            let mut g = self.op.log_likelihood_grad(y, x);
            g.axpy(1.0, &tweedie_score(x, denoiser.as_mut())?);
            g.axpy(1.0, &projection_drift(x, self.proj_box, self.proj_lambda));
            Ok(g)
        };
        ula_chain(drift, y.clone(), &self.cfg, &mut stream.rng(), None)
    }
}
