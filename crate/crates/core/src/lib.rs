//! Monte Carlo coverage audits for Bayesian imaging.
//!
//! The crate estimates how often the credible regions reported by a
//! Bayesian imaging method contain the image that actually generated the
//! data, over replications of the acquisition experiment. It bundles:
//!
//! * a circulant linear-Gaussian deblurring model ([`observation`]),
//! * convex and learned priors with their proximal and score operators ([`priors`]),
//! * Langevin, Gibbs, and exact conjugate samplers behind a single contract ([`samplers`]),
//! * HPD and ℓ2-ball credible regions ([`regions`]),
//! * the coverage audit itself with Wilson intervals ([`audit`]),
//! * closed-form conjugate-Gaussian references ([`oracle`]),
//! * the report file formats and the external denoiser wire protocol.

pub mod audit;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod observation;
pub mod oracle;
pub mod priors;
pub mod protocol;
pub mod regions;
pub mod report;
pub mod rng;
pub mod samplers;

pub use crate::audit::{
    classify, run_audit, wilson_interval, AuditConfig, Calibration, CoverageReport, RegionKind,
    TrialRecord, TrialSampling,
};
pub use crate::dataset::{load_dataset, Dataset};
pub use crate::error::{Error, Result};
pub use crate::image::{Image, Shape};
pub use crate::kernel::{convolve_circular, Kernel};
pub use crate::metrics::psnr;
pub use crate::observation::{sample_observation, sigma_from_bsnr, BlurOperator, ObservationModel};
pub use crate::oracle::{analytic_posterior, brute_coverage, AnalyticPosterior, GaussianPrior};
pub use crate::regions::{ball_from_chain, hpd_from_chain, BallRegion, CredibleRegion, HpdRegion};
pub use crate::rng::SeedPath;
pub use crate::samplers::{ChainConfig, ChainOutput, LogDensity, PosteriorSampler};

/// Crate version, echoed into report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
