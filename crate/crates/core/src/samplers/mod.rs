//! Posterior samplers behind one contract.
//!
//! Every sampler turns an observation `y` plus a random substream into a
//! [`ChainOutput`]. Samplers whose prior potential can be evaluated also
//! record `U_y(x) = log p(y|x) + log p(x)` (up to a constant) for each
//! emitted sample and hand out an evaluator with the same constant, which
//! the HPD region uses for membership tests.

mod crr;
mod exact;
mod external;
mod gibbs;
mod myula;
mod pnp;
mod sapg;
mod ula;

pub use crr::CrrSampler;
pub use exact::ExactGaussianSampler;
pub use external::ExternalSampler;
pub use gibbs::{draw_delta, draw_gamma, GibbsHyperPriors, GibbsOptions, GibbsSampler};
pub use myula::{myula_chain, MyulaSampler};
pub use pnp::{PnpUlaSampler, DEFAULT_PROJ_BOX, DEFAULT_PROJ_LAMBDA};
pub use sapg::{sapg, SapgOptions, SapgOutput, TvSapgSampler};
pub use ula::ula_chain;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::rng::SeedPath;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub step_size: f64,
    pub n_burnin: usize,
    pub n_samples: usize,
    pub thinning: usize,
}

impl ChainConfig {
    pub fn new(step_size: f64, n_burnin: usize, n_samples: usize) -> Self {
        Self {
            step_size,
            n_burnin,
            n_samples,
            thinning: 1,
        }
    }

    pub fn with_thinning(mut self, thinning: usize) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if self.thinning == 0 {
            return Err(Error::invalid("thinning must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.n_burnin + self.n_samples * self.thinning
    }

    /// Whether iteration `k` (0-based) emits a sample.
    pub(crate) fn emits(&self, k: usize) -> bool {
        k >= self.n_burnin && (k - self.n_burnin + 1) % self.thinning == 0
    }

    /// Reject `δ > 1/L` for a drift with Lipschitz constant `lipschitz`.
    pub fn check_step(&self, sampler: &'static str, lipschitz: f64) -> Result<()> {
        self.validate()?;
        let bound = 1.0 / lipschitz;
        if self.step_size > bound {
            return Err(Error::StepTooLarge {
                sampler,
                step: self.step_size,
                bound,
            });
        }
        Ok(())
    }
}

/// `U_y(x)` for a fixed observation and fitted model, on the same additive
/// constant as the chain's recorded values.
pub trait LogDensity: Send + Sync {
    fn log_density(&self, x: &Image) -> f64;
}

impl<F: Fn(&Image) -> f64 + Send + Sync> LogDensity for F {
    fn log_density(&self, x: &Image) -> f64 {
        self(x)
    }
}

/// Streaming per-pixel mean and second central moment (Welford).
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    shape: Shape,
}

impl MomentAccumulator {
    pub fn new(shape: Shape) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; shape.len()],
            m2: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn push(&mut self, x: &Image) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x.as_slice()) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Image {
        Image::from_vec(self.shape, self.mean.clone())
    }

    /// Per-pixel sample variance (`n − 1` normalisation).
    pub fn variance(&self) -> Image {
        let denom = (self.count.max(2) - 1) as f64;
        Image::from_vec(self.shape, self.m2.iter().map(|s| s / denom).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainWarnings {
    /// Proximal evaluations that stopped at the iteration cap.
    pub prox_not_converged: usize,
    /// A stochastic-approximation parameter stayed on a bound throughout
    /// its averaging window.
    pub boundary_solution: bool,
}

#[derive(Clone)]
pub struct ChainOutput {
    pub samples: Vec<Image>,
    pub log_density: Option<Vec<f64>>,
    pub evaluator: Option<Arc<dyn LogDensity>>,
    pub moments: MomentAccumulator,
    /// Per-iteration traces of auxiliary parameters (hyperparameters, λ).
    pub traces: BTreeMap<String, Vec<f64>>,
    /// Fitted scalars such as an estimated regularisation weight.
    pub scalars: BTreeMap<String, f64>,
    pub warnings: ChainWarnings,
    pub wall_time: Duration,
}

impl fmt::Debug for ChainOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChainOutput")
            .field("samples", &self.samples.len())
            .field("log_density", &self.log_density.as_ref().map(|v| v.len()))
            .field("has_evaluator", &self.evaluator.is_some())
            .field("scalars", &self.scalars)
            .field("warnings", &self.warnings)
            .field("wall_time", &self.wall_time)
            .finish()
    }
}

impl ChainOutput {
    pub(crate) fn new(shape: Shape, capacity: usize, record_density: bool) -> Self {
        Self {
            samples: Vec::with_capacity(capacity),
            log_density: record_density.then(|| Vec::with_capacity(capacity)),
            evaluator: None,
            moments: MomentAccumulator::new(shape),
            traces: BTreeMap::new(),
            scalars: BTreeMap::new(),
            warnings: ChainWarnings::default(),
            wall_time: Duration::ZERO,
        }
    }

    pub(crate) fn emit(&mut self, x: Image, log_density: Option<f64>) {
        self.moments.push(&x);
        if let (Some(values), Some(v)) = (self.log_density.as_mut(), log_density) {
            values.push(v);
        }
        self.samples.push(x);
    }

    /// Wrap samples produced elsewhere. No potentials are recorded.
    pub fn from_samples(samples: Vec<Image>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("a chain needs at least one sample"))?;
        let mut out = Self::new(first.shape(), samples.len(), false);
        let shape = first.shape();
        for x in samples {
            x.check_shape(shape)?;
            out.emit(x, None);
        }
        Ok(out)
    }

    pub fn mean(&self) -> Image {
        self.moments.mean()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The sampler contract used by the audit.
pub trait PosteriorSampler: Send + Sync {
    fn name(&self) -> &str;

    /// Grid the sampler was configured for.
    fn shape(&self) -> Shape;

    /// Whether chains carry `U_y` values and an evaluator (needed for HPD regions).
    fn has_log_density(&self) -> bool;

    fn sample(&self, y: &Image, stream: &SeedPath) -> Result<ChainOutput>;
}

pub(crate) fn check_finite(x: &Image, step: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}
