//! The coverage audit: replicate the acquisition experiment, build a credible
//! region from each posterior chain, and count how often it misses the truth.
//!
//! For a level `α` the signed error is `ℓ̂ = α − Σ r_n / N`, where `r_n = 1`
//! when trial `n`'s region excludes the image that generated its data.
//! Positive values mean conservative regions, negative values overconfident
//! ones.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::metrics::psnr;
use crate::observation::{observe_with, ObservationModel};
use crate::regions::CredibleRegion;
use crate::rng::SeedPath;
use crate::samplers::{ChainOutput, PosteriorSampler};

pub use crate::regions::RegionKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Default α grid: a spread over (0, 1) plus the levels of the usual
/// 80–99.9% target-coverage table.
pub const DEFAULT_ALPHAS: [f64; 10] = [0.001, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.5, 0.9, 0.99];

/// Substream index reserved for the dataset traversal order.
const SELECTION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialSampling {
    /// Walk a single shuffle of the dataset, wrapping around.
    #[default]
    Cyclic,
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alphas: Vec<f64>,
    pub n_trials: usize,
    pub region: RegionKind,
    #[serde(default)]
    pub sampling: TrialSampling,
    pub seed: u64,
    /// Largest tolerated fraction of diverged trials.
    pub max_failure_rate: f64,
}

impl AuditConfig {
    pub fn new(alphas: Vec<f64>, n_trials: usize, region: RegionKind, seed: u64) -> Self {
        Self {
            alphas,
            n_trials,
            region,
            sampling: TrialSampling::Cyclic,
            seed,
            max_failure_rate: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::invalid("alpha grid is empty"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::invalid(format!("alpha {a} outside (0, 1)")));
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("alpha grid must be strictly increasing"));
        }
        if self.n_trials == 0 {
            return Err(Error::invalid("n_trials must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::invalid("max_failure_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// What the audit needs from a method: a chain per trial.
///
/// Every [`PosteriorSampler`] is one. The truth is passed along only so that
/// test doubles can construct degenerate samplers; real methods ignore it.
pub trait TrialSampler: Sync {
    fn method(&self) -> &str;
    fn shape(&self) -> Shape;
    fn has_log_density(&self) -> bool;
    fn run_trial(&self, truth: &Image, y: &Image, stream: &SeedPath) -> Result<ChainOutput>;
}

impl<S: PosteriorSampler + ?Sized> TrialSampler for S {
    fn method(&self) -> &str {
        self.name()
    }

    fn shape(&self) -> Shape {
        PosteriorSampler::shape(self)
    }

    fn has_log_density(&self) -> bool {
        PosteriorSampler::has_log_density(self)
    }

    fn run_trial(&self, _truth: &Image, y: &Image, stream: &SeedPath) -> Result<ChainOutput> {
        self.sample(y, stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub item_index: usize,
    pub item_id: String,
    pub seed_path: String,
    pub psnr_mean: Option<f64>,
    pub psnr_obs: Option<f64>,
    pub wall_ms: f64,
    /// One flag per α of the grid; empty for failed trials.
    pub misses: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub alpha: f64,
    pub target_coverage: f64,
    pub observed_coverage: f64,
    pub misses: usize,
    pub n: usize,
    pub ell_hat: f64,
    /// 95% Wilson interval on the observed coverage.
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl CoverageRow {
    pub fn from_counts(alpha: f64, misses: usize, n: usize) -> Result<Self> {
        let (miss_low, miss_high) = wilson_interval(misses, n, 0.95)?;
        let miss_rate = misses as f64 / n as f64;
        Ok(Self {
            alpha,
            target_coverage: 1.0 - alpha,
            observed_coverage: 1.0 - miss_rate,
            misses,
            n,
            ell_hat: alpha - miss_rate,
            wilson_low: 1.0 - miss_high,
            wilson_high: 1.0 - miss_low,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    pub observation: ObservationModel,
    pub audit: AuditConfig,
    /// Free-form echo of the run configuration.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub name: String,
    pub method: String,
    pub region: RegionKind,
    pub n_requested: usize,
    pub n_completed: usize,
    pub n_failed: usize,
    pub rows: Vec<CoverageRow>,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub psnr_obs_mean: Option<f64>,
    pub provenance: Provenance,
    /// Timing is kept out of the serialised report so that it stays
    /// byte-reproducible; it travels in the trial records instead.
    #[serde(skip)]
    pub mean_wall_ms: f64,
    #[serde(skip)]
    pub trials: Vec<TrialRecord>,
}

impl CoverageReport {
    pub fn row(&self, alpha: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| (r.alpha - alpha).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    Conservative,
    Overconfident,
    Calibrated,
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Calibration::Conservative => "conservative",
            Calibration::Overconfident => "overconfident",
            Calibration::Calibrated => "calibrated",
        })
    }
}

/// Wilson score interval for a binomial proportion `misses / n`.
pub fn wilson_interval(misses: usize, n: usize, level: f64) -> Result<(f64, f64)> {
    if n == 0 || misses > n {
        return Err(Error::invalid(format!("invalid counts: {misses} of {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let nf = n as f64;
    let p = misses as f64 / nf;
    let z2n = z * z / nf;
    let center = (p + z2n / 2.0) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / nf + z2n / (4.0 * nf)).sqrt();
    let low = if misses == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if misses == n { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

/// Verdict at one level of the report's grid, from the 95% Wilson interval:
/// the whole interval above the target coverage is conservative, below it
/// overconfident.
pub fn classify(report: &CoverageReport, alpha: f64) -> Result<Calibration> {
    let row = report
        .row(alpha)
        .ok_or_else(|| Error::invalid(format!("alpha {alpha} is not in the report's grid")))?;
    Ok(if row.wilson_low > row.target_coverage {
        Calibration::Conservative
    } else if row.wilson_high < row.target_coverage {
        Calibration::Overconfident
    } else {
        Calibration::Calibrated
    })
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Dataset index used by each trial.
fn trial_items(cfg: &AuditConfig, m: usize) -> Vec<usize> {
    let root = SeedPath::new(cfg.seed);
    match cfg.sampling {
        TrialSampling::Cyclic => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut root.child(SELECTION_STREAM).rng());
            (0..cfg.n_trials).map(|t| order[t % m]).collect()
        }
        TrialSampling::WithReplacement => {
            let mut rng = root.child(SELECTION_STREAM).rng();
            (0..cfg.n_trials).map(|_| rng.random_range(0..m)).collect()
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Run the audit. Trials execute on the current rayon pool; each draws its
/// noise and chain from substreams of `(seed, trial)`, so the result does
/// not depend on scheduling.
pub fn run_audit<S: TrialSampler + ?Sized>(
    dataset: &Dataset,
    sampler: &S,
    model: &ObservationModel,
    cfg: &AuditConfig,
) -> Result<CoverageReport> {
    run_audit_with_echo(dataset, sampler, model, cfg, "", serde_json::Value::Null)
}

/// [`run_audit`] with an experiment name and a configuration echo for the
/// report provenance.
pub fn run_audit_with_echo<S: TrialSampler + ?Sized>(
    dataset: &Dataset,
    sampler: &S,
    model: &ObservationModel,
    cfg: &AuditConfig,
    name: &str,
    config_echo: serde_json::Value,
) -> Result<CoverageReport> {
    cfg.validate()?;
    let shape = dataset.common_shape()?;
    if sampler.shape() != shape {
        return Err(Error::DimensionMismatch {
            expected: shape.to_string(),
            actual: format!("sampler configured for {}", sampler.shape()),
        });
    }
    if cfg.region == RegionKind::Hpd && !sampler.has_log_density() {
        return Err(Error::UnsupportedRegion(format!(
            "method '{}' has no evaluable prior potential; use ball regions",
            sampler.method()
        )));
    }
    let op = model.operator(shape)?;
    let root = SeedPath::new(cfg.seed);
    let items = trial_items(cfg, dataset.len());

    let records = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| -> Result<TrialRecord> {
            let stream = root.child(t as u64);
            let (truth, label) = dataset.get(items[t]);
            let start = Instant::now();
            let y = observe_with(&op, truth, &mut stream.child(0).rng());
            let mut record = TrialRecord {
                trial: t,
                item_index: items[t],
                item_id: label.to_string(),
                seed_path: stream.to_string(),
                psnr_mean: None,
                psnr_obs: finite(psnr(truth, &y)?),
                wall_ms: 0.0,
                misses: Vec::new(),
                error: None,
                lambda_hat: None,
            };
            match sampler.run_trial(truth, &y, &stream.child(1)) {
                Ok(chain) => {
                    let regions = CredibleRegion::from_chain(&chain, cfg.region, &cfg.alphas)?;
                    for region in &regions {
                        record.misses.push(u8::from(!region.contains(truth)?));
                    }
                    record.psnr_mean = finite(psnr(truth, &chain.mean())?);
                    record.lambda_hat = chain.scalars.get("lambda_hat").copied();
                    if chain.warnings.prox_not_converged > 0 {
                        log::debug!(
                            "trial {t}: {} prox evaluations hit the iteration cap",
                            chain.warnings.prox_not_converged
                        );
                    }
                }
                Err(e @ Error::Diverged { .. }) => {
                    log::warn!("trial {t} ({label}) failed: {e}");
                    record.error = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
            record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let completed: Vec<&TrialRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let n_failed = records.len() - completed.len();
    if n_failed as f64 > cfg.max_failure_rate * cfg.n_trials as f64 {
        return Err(Error::Audit(format!(
            "{n_failed} of {} trials diverged (limit {:.1}%)",
            cfg.n_trials,
            100.0 * cfg.max_failure_rate
        )));
    }
    if completed.is_empty() {
        return Err(Error::Audit("no trial completed".into()));
    }
    let n = completed.len();
    let rows = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            let misses = completed.iter().map(|r| r.misses[j] as usize).sum();
            CoverageRow::from_counts(alpha, misses, n)
        })
        .collect::<Result<Vec<_>>>()?;
    let psnrs: Vec<f64> = completed.iter().filter_map(|r| r.psnr_mean).collect();
    let psnr_obs: Vec<f64> = completed.iter().filter_map(|r| r.psnr_obs).collect();
    let (psnr_mean, psnr_std) = mean_std(&psnrs);
    let mean_wall_ms = completed.iter().map(|r| r.wall_ms).sum::<f64>() / n as f64;
    let method = sampler.method().to_string();
    Ok(CoverageReport {
        schema_version: SCHEMA_VERSION,
        name: if name.is_empty() { method.clone() } else { name.to_string() },
        method,
        region: cfg.region,
        n_requested: cfg.n_trials,
        n_completed: n,
        n_failed,
        rows,
        psnr_mean,
        psnr_std,
        psnr_obs_mean: mean_std(&psnr_obs).0,
        provenance: Provenance {
            seed: cfg.seed,
            version: crate::VERSION.to_string(),
            observation: model.clone(),
            audit: cfg.clone(),
            config: config_echo,
        },
        mean_wall_ms,
        trials: records,
    })
}
