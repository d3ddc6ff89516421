//! Prior potentials `φ(x) = -log p(x) + const` together with the operators
//! each sampler needs: gradients for smooth priors, proximal maps for
//! non-smooth ones, and Tweedie score estimates for denoiser-defined priors.

mod crr;
mod denoiser;
mod gmrf;
mod quadratic;
mod tv;

pub use crr::{Activation, CrrModel};
pub use denoiser::{tweedie_score, Denoiser, DenoiserSpec, GaussianMmse, Smoothing};
pub use gmrf::{GmrfOperator, GmrfPrior, DEFAULT_DC_RIDGE};
pub use quadratic::QuadraticPotential;
pub use tv::{
    tv_adjoint, tv_gradient, tv_prox, tv_value, TvPotential, TvProx, TvProxOptions,
};

use crate::image::Image;

/// Output of a proximal evaluation. Iterative solvers report whether they
/// met their tolerance; closed forms always do.
#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub image: Image,
    pub converged: bool,
}

/// Solver state carried between successive prox calls of one chain.
#[derive(Debug, Clone, Default)]
pub struct ProxState {
    pub dual: Option<Vec<f64>>,
}

/// A convex potential with a computable proximal operator
/// `prox_θφ(v) = argmin_u ½‖u − v‖² + θ φ(u)`.
pub trait ProxPotential: Send + Sync {
    fn potential(&self, x: &Image) -> f64;

    fn prox(&self, v: &Image, theta: f64) -> ProxOutput {
        self.prox_with_state(v, theta, &mut ProxState::default())
    }

    /// Like [`ProxPotential::prox`], optionally warm-starting from `state`.
    fn prox_with_state(&self, v: &Image, theta: f64, state: &mut ProxState) -> ProxOutput;
}

/// A potential of the form `φ(x) = λ·g(x)` with `g` positively homogeneous,
/// `g(c x) = c^k g(x)`. Then `log Z(λ) = -(n/k) log λ + const`, which is all
/// the marginal-likelihood gradient in λ needs.
pub trait HomogeneousPotential: ProxPotential + Clone {
    fn weight(&self) -> f64;
    fn with_weight(&self, lambda: f64) -> Self;
    fn degree(&self) -> f64;
    /// The unweighted functional `g(x)`.
    fn functional(&self, x: &Image) -> f64;
}
