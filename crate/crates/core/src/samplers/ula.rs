use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::image::Image;
use crate::rng::Stream;

use super::{check_finite, ChainConfig, ChainOutput};

/// Unadjusted Langevin algorithm,
/// `x_{k+1} = x_k + δ·drift(x_k) + sqrt(2δ)·ξ_k`.
///
/// `drift` is the gradient of the log target. When `log_density` is given
/// it is evaluated on every emitted sample.
pub fn ula_chain(
    mut drift: impl FnMut(&Image) -> Result<Image>,
    x0: Image,
    cfg: &ChainConfig,
    rng: &mut Stream,
    log_density: Option<&dyn Fn(&Image) -> f64>,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = ChainOutput::new(x0.shape(), cfg.n_samples, log_density.is_some());
    let noise_scale = (2.0 * cfg.step_size).sqrt();
    let mut x = x0;
    for k in 0..cfg.total_steps() {
        let g = drift(&x)?;
        x.axpy(cfg.step_size, &g);
        for v in x.as_mut_slice() {
            *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        check_finite(&x, k)?;
        if cfg.emits(k) {
            let value = log_density.map(|f| f(&x));
            out.emit(x.clone(), value);
        }
    }
    out.wall_time = start.elapsed();
    Ok(out)
}
