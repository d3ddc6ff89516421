use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::protocol::{Client, Endpoint};
use crate::rng::SeedPath;

use super::{ChainOutput, PosteriorSampler};

/// A sampler living in another process, reached over the frame protocol.
///
/// Each chain opens its own connection and requests `n_samples` draws for
/// the observation. The protocol carries no seed, so determinism is up to
/// the remote side.
#[derive(Debug, Clone)]
pub struct ExternalSampler {
    endpoint: Endpoint,
    shape: Shape,
    n_samples: usize,
}

impl ExternalSampler {
    pub fn new(endpoint: Endpoint, shape: Shape, n_samples: usize) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::invalid("external sampler needs at least 2 samples per observation"));
        }
        Ok(Self {
            endpoint,
            shape,
            n_samples,
        })
    }
}

impl PosteriorSampler for ExternalSampler {
    fn name(&self) -> &str {
        "external"
    }

    fn shape(&self) -> Shape {
        self.shape
    }

    fn has_log_density(&self) -> bool {
        false
    }

    fn sample(&self, y: &Image, _stream: &SeedPath) -> Result<ChainOutput> {
        y.check_shape(self.shape)?;
        let start = Instant::now();
        let mut client = Client::connect(&self.endpoint)?;
        let samples = client.sample(y, self.n_samples)?;
        let mut out = ChainOutput::new(self.shape, self.n_samples, false);
        for s in samples {
            out.emit(s, None);
        }
        out.wall_time = start.elapsed();
        Ok(out)
    }
}
