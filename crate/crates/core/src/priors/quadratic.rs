use crate::error::{Error, Result};
use crate::image::Image;

use super::{HomogeneousPotential, ProxOutput, ProxPotential, ProxState};

/// `φ(x) = λ‖x‖²/2`, the potential of `N(0, λ⁻¹ I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPotential {
    lambda: f64,
}

impl QuadraticPotential {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn gradient(&self, x: &Image) -> Image {
        x.scale(self.lambda)
    }
}

impl ProxPotential for QuadraticPotential {
    fn potential(&self, x: &Image) -> f64 {
        0.5 * self.lambda * x.norm_sq()
    }

    fn prox_with_state(&self, v: &Image, theta: f64, _: &mut ProxState) -> ProxOutput {
        ProxOutput {
            image: v.scale(1.0 / (1.0 + theta * self.lambda)),
            converged: true,
        }
    }
}

impl HomogeneousPotential for QuadraticPotential {
    fn weight(&self) -> f64 {
        self.lambda
    }

    fn with_weight(&self, lambda: f64) -> Self {
        Self { lambda }
    }

    fn degree(&self) -> f64 {
        2.0
    }

    fn functional(&self, x: &Image) -> f64 {
        0.5 * x.norm_sq()
    }
}
