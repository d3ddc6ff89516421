use std::sync::Arc;

use crate::error::Result;
use crate::image::{Image, Shape};
use crate::observation::{BlurOperator, ObservationModel};
use crate::priors::CrrModel;
use crate::rng::SeedPath;

use super::{ula_chain, ChainConfig, ChainOutput, PosteriorSampler};

/// Plain ULA on the smooth convex CRR posterior, started at `y`.
#[derive(Debug, Clone)]
pub struct CrrSampler {
    op: BlurOperator,
    model: Arc<CrrModel>,
    cfg: ChainConfig,
}

impl CrrSampler {
    pub fn new(obs: &ObservationModel, shape: Shape, model: CrrModel, cfg: ChainConfig) -> Result<Self> {
        let op = obs.operator(shape)?;
        cfg.check_step("crr", op.lipschitz() + model.lipschitz(shape))?;
        Ok(Self {
            op,
            model: Arc::new(model),
            cfg,
        })
    }
}

impl PosteriorSampler for CrrSampler {
    fn name(&self) -> &str {
        "crr"
    }

    fn shape(&self) -> Shape {
        self.op.shape()
    }

    fn has_log_density(&self) -> bool {
        true
    }

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        y.check_shape(self.op.shape())?;
        let (op, model, y0) = (self.op.clone(), self.model.clone(), y.clone());
        let evaluator = Arc::new(move |x: &Image| op.log_likelihood(&y0, x) - model.potential(x));
        let drift = |x: &Image| {
            let mut g = self.op.log_likelihood_grad(y, x);
            g.axpy(-1.0, &self.model.gradient(x));
            Ok(g)
        };
        let eval = evaluator.clone();
        let mut out = ula_chain(drift, y.clone(), &self.cfg, &mut stream.rng(), Some(&|x: &Image| eval(x)))?;
        out.evaluator = Some(evaluator);
        Ok(out)
    }
}
