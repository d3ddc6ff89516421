//! Credible regions built from chain output.
//!
//! Both constructions use empirical order statistics of the chain. The HPD
//! threshold takes the lower statistic at index `floor(α·N)` and the ball
//! radius the upper statistic at index `ceil((1−α)·N)` (1-based), which
//! errs towards inclusion for both.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::samplers::{ChainOutput, LogDensity};

/// Slack absorbing representation error in `α·N` (0.1·100 is 10.000000000000002).
const INDEX_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    Hpd,
    Ball,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::Hpd => "hpd",
            RegionKind::Ball => "ball",
        })
    }
}

impl std::str::FromStr for RegionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hpd" => Ok(RegionKind::Hpd),
            "ball" => Ok(RegionKind::Ball),
            other => Err(Error::invalid(format!("unknown region kind '{other}' (expected hpd or ball)"))),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn sorted_finite(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid(format!("no {what} to build a region from")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite {what}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// HPD thresholds `γ_α` for several levels from one set of potentials.
pub fn hpd_thresholds(log_densities: &[f64], alphas: &[f64]) -> Result<Vec<f64>> {
    let sorted = sorted_finite(log_densities, "potential values")?;
    let n = sorted.len();
    alphas
        .iter()
        .map(|&alpha| {
            check_alpha(alpha)?;
            let index = ((alpha * n as f64 + INDEX_SLACK).floor() as usize).clamp(1, n);
            Ok(sorted[index - 1])
        })
        .collect()
}

/// Sample mean and ball radii for several levels.
pub fn ball_radii(samples: &[Image], alphas: &[f64]) -> Result<(Image, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "ball regions need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let shape = samples[0].shape();
    // running mean, so that identical samples give an exact center
    let mut center = samples[0].clone();
    for (k, s) in samples.iter().enumerate().skip(1) {
        s.check_shape(shape)?;
        let w = 1.0 / (k + 1) as f64;
        for (c, v) in center.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *c += (v - *c) * w;
        }
    }
    let radii = ball_radii_about(samples, &center, alphas)?;
    Ok((center, radii))
}

fn ball_radii_about(samples: &[Image], center: &Image, alphas: &[f64]) -> Result<Vec<f64>> {
    let distances: Vec<f64> = samples.iter().map(|s| s.distance(center)).collect();
    let sorted = sorted_finite(&distances, "sample distances")?;
    let n = sorted.len();
    alphas
        .iter()
        .map(|&alpha| {
            check_alpha(alpha)?;
            let index = (((1.0 - alpha) * n as f64 - INDEX_SLACK).ceil() as usize).clamp(1, n);
            Ok(sorted[index - 1])
        })
        .collect()
}

/// `γ_α` such that at least `1−α` of the chain has potential `≥ γ_α`.
pub fn hpd_from_chain(log_densities: &[f64], alpha: f64) -> Result<f64> {
    Ok(hpd_thresholds(log_densities, &[alpha])?[0])
}

pub fn ball_from_chain(samples: &[Image], alpha: f64) -> Result<BallRegion> {
    let (center, radii) = ball_radii(samples, &[alpha])?;
    Ok(BallRegion {
        center,
        radius: radii[0],
        alpha,
    })
}

/// `{x : U_y(x) ≥ γ_α}`.
#[derive(Clone)]
pub struct HpdRegion {
    pub gamma: f64,
    pub alpha: f64,
    pub evaluator: Arc<dyn LogDensity>,
}

impl fmt::Debug for HpdRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HpdRegion")
            .field("gamma", &self.gamma)
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

impl HpdRegion {
    pub fn contains(&self, x: &Image) -> bool {
        self.evaluator.log_density(x) >= self.gamma
    }
}

/// `{x : ‖x − center‖₂ ≤ radius}`.
#[derive(Debug, Clone)]
pub struct BallRegion {
    pub center: Image,
    pub radius: f64,
    pub alpha: f64,
}

impl BallRegion {
    pub fn contains(&self, x: &Image) -> Result<bool> {
        x.check_shape(self.center.shape())?;
        Ok(x.distance(&self.center) <= self.radius)
    }
}

#[derive(Debug, Clone)]
pub enum CredibleRegion {
    Hpd(HpdRegion),
    Ball(BallRegion),
}

impl CredibleRegion {
    pub fn alpha(&self) -> f64 {
        match self {
            CredibleRegion::Hpd(r) => r.alpha,
            CredibleRegion::Ball(r) => r.alpha,
        }
    }

    pub fn contains(&self, x: &Image) -> Result<bool> {
        match self {
            CredibleRegion::Hpd(r) => Ok(r.contains(x)),
            CredibleRegion::Ball(r) => r.contains(x),
        }
    }

    /// One region per level, all from the same chain.
    pub fn from_chain(chain: &ChainOutput, kind: RegionKind, alphas: &[f64]) -> Result<Vec<Self>> {
        match kind {
            RegionKind::Ball => {
                let center = chain.mean();
                let radii = ball_radii_about(&chain.samples, &center, alphas)?;
                Ok(alphas
                    .iter()
                    .zip(radii)
                    .map(|(&alpha, radius)| {
                        CredibleRegion::Ball(BallRegion {
                            center: center.clone(),
                            radius,
                            alpha,
                        })
                    })
                    .collect())
            }
            RegionKind::Hpd => {
                let (Some(values), Some(evaluator)) = (&chain.log_density, &chain.evaluator) else {
                    return Err(Error::UnsupportedRegion(
                        "HPD regions need a sampler with an evaluable prior potential".into(),
                    ));
                };
                let gammas = hpd_thresholds(values, alphas)?;
                Ok(alphas
                    .iter()
                    .zip(gammas)
                    .map(|(&alpha, gamma)| {
                        CredibleRegion::Hpd(HpdRegion {
                            gamma,
                            alpha,
                            evaluator: evaluator.clone(),
                        })
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn pixel(v: f64) -> Image {
        Image::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn hpd_lower_order_statistic() {
        let values: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(hpd_from_chain(&values, 0.10).unwrap(), 10.0);
        let below = values.iter().filter(|&&v| v < 10.0).count();
        assert_eq!(below, 9);
        assert_eq!(hpd_from_chain(&values, 1e-9).unwrap(), 1.0);
        assert_eq!(hpd_from_chain(&[3.5; 7], 0.3).unwrap(), 3.5);
    }

    #[test]
    fn hpd_rejects_bad_input() {
        assert!(hpd_from_chain(&[], 0.1).is_err());
        assert!(hpd_from_chain(&[1.0, f64::NAN], 0.1).is_err());
        assert!(hpd_from_chain(&[1.0, 2.0], 0.0).is_err());
        assert!(hpd_from_chain(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn ball_two_points() {
        let b = ball_from_chain(&[pixel(1.0), pixel(-1.0)], 0.4).unwrap();
        assert_eq!(b.center.get(0, 0), 0.0);
        assert_eq!(b.radius, 1.0);
    }

    #[test]
    fn ball_identical_samples() {
        let b = ball_from_chain(&vec![pixel(0.3); 5], 0.1).unwrap();
        assert_eq!(b.radius, 0.0);
        assert!(b.contains(&pixel(0.3)).unwrap());
        assert!(!b.contains(&pixel(0.3 + 1e-12)).unwrap());
    }

    #[test]
    fn ball_boundary_is_strict_outside() {
        let b = BallRegion {
            center: pixel(0.0),
            radius: 2.0,
            alpha: 0.1,
        };
        assert!(b.contains(&pixel(2.0)).unwrap());
        assert!(!b.contains(&pixel(2.0 + 1e-9)).unwrap());
        assert!(b.contains(&pixel(0.0)).unwrap());
    }

    #[test]
    fn ball_needs_two_samples() {
        assert!(ball_from_chain(&[pixel(0.0)], 0.1).is_err());
    }

    #[test]
    fn ball_radius_matches_chi_square_quantile() {
        let shape = Shape::new(16, 16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Image> = (0..100_000)
            .map(|_| Image::from_fn(shape, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let b = ball_from_chain(&samples, 0.05).unwrap();
        let expected = ChiSquared::new(256.0).unwrap().inverse_cdf(0.95).sqrt();
        assert!((b.radius / expected - 1.0).abs() < 0.03, "{} vs {expected}", b.radius);
    }

    #[test]
    fn thresholds_nest() {
        let values: Vec<f64> = (0..37).map(|i| ((i * 7919) % 37) as f64 * 0.5).collect();
        let alphas = [0.01, 0.1, 0.3, 0.5, 0.9];
        let g = hpd_thresholds(&values, &alphas).unwrap();
        assert!(g.windows(2).all(|w| w[0] <= w[1]));
        let samples: Vec<Image> = values.iter().map(|&v| pixel(v)).collect();
        let (_, r) = ball_radii(&samples, &alphas).unwrap();
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn additive_constant_does_not_change_verdicts() {
        let values = [-3.0, -1.0, -2.5, -0.1, -7.0, -4.0];
        let shift = 123.456;
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let candidates = [-0.5, -2.6, -3.1, -9.0];
        for alpha in [0.2, 0.5, 0.8] {
            let g = hpd_from_chain(&values, alpha).unwrap();
            let gs = hpd_from_chain(&shifted, alpha).unwrap();
            for c in candidates {
                assert_eq!(c >= g, c + shift >= gs);
            }
        }
    }
}
