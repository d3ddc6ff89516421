use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use uqaudit_core::audit::run_audit_with_echo;
use uqaudit_core::dataset::{contact_sheet, load_image, save_png16};
use uqaudit_core::priors::{CrrModel, GmrfPrior, TvPotential, DEFAULT_DC_RIDGE};
use uqaudit_core::protocol::conformance_check;
use uqaudit_core::report::{merge_table, write_bundle, TableEntry};
use uqaudit_core::samplers::{
    CrrSampler, ExactGaussianSampler, ExternalSampler, GibbsHyperPriors, GibbsOptions, GibbsSampler,
    PnpUlaSampler, SapgOptions, TvSapgSampler,
};
use uqaudit_core::{
    classify, convolve_circular, load_dataset, psnr, ChainConfig, CoverageReport, Dataset, GaussianPrior,
    ObservationModel, PosteriorSampler, SeedPath, Shape,
};

use crate::config::{
    parse_kernel, FieldKind, RunConfig, DEFAULT_CRR_LAMBDA, DEFAULT_SAPG_ITERATIONS, DEFAULT_STEP_FRACTION,
    OUT_DIR_ENV,
};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub method: Option<String>,
}

impl Overrides {
    /// Apply to a loaded config, then validate it.
    pub fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(m) = &self.method {
            cfg.method.name = m.clone();
        }
        if let Some(s) = self.seed {
            cfg.audit.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--out`, then the environment, then the config.
    pub fn output_dir(&self, cfg: &RunConfig) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => cfg.output_dir.clone(),
        }
    }
}

pub fn resolve_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(dir) = &cfg.dataset.directory {
        return load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()));
    }
    let s = cfg.dataset.synthetic.as_ref().context("dataset has no source")?;
    Ok(s.prior()?.draw_dataset(s.count, &SeedPath::new(s.seed))?)
}

/// Noise level from the config. With a BSNR, σ² is the dataset mean of
/// `Var(Hx)` scaled by `10^(-bsnr/10)`, so every trial shares one σ.
pub fn observation_model(cfg: &RunConfig, dataset: Option<&Dataset>) -> Result<ObservationModel> {
    let kernel = parse_kernel(&cfg.observation.kernel).map_err(anyhow::Error::msg)?;
    let sigma = match (cfg.observation.sigma, cfg.observation.bsnr_db) {
        (Some(s), None) => s,
        (None, Some(bsnr)) => {
            let owned;
            let data = match dataset {
                Some(d) => d,
                None => {
                    owned = resolve_dataset(cfg)?;
                    &owned
                }
            };
            let mut var = 0.0;
            for x in data.items() {
                var += convolve_circular(x, &kernel)?.variance();
            }
            var /= data.len() as f64;
            if !(var > 0.0) {
                bail!("BSNR is undefined: every blurred image in the dataset is constant");
            }
            (var * 10f64.powf(-bsnr / 10.0)).sqrt()
        }
        _ => bail!("observation needs exactly one of sigma or bsnr_db"),
    };
    Ok(ObservationModel::new(kernel, sigma)?)
}

fn exact_prior(cfg: &RunConfig, shape: Shape) -> Result<GaussianPrior> {
    let m = &cfg.method;
    let prior = match (m.prior_scale, &cfg.dataset.synthetic) {
        (Some(scale), _) => {
            let mean = m.prior_mean.unwrap_or(0.0);
            match m.prior_kind.unwrap_or(FieldKind::Smooth) {
                FieldKind::Smooth => GaussianPrior::smooth(shape, mean, scale)?,
                FieldKind::Isotropic => GaussianPrior::isotropic(shape, mean, scale)?,
            }
        }
        (None, Some(s)) => {
            let p = s.prior()?;
            if p.shape() != shape {
                bail!("synthetic prior is {} but the image is {shape}", p.shape());
            }
            p
        }
        (None, None) => bail!("exact-gaussian needs method.prior_scale"),
    };
    Ok(match m.prior_factor {
        Some(f) => prior.scaled(f)?,
        None => prior,
    })
}

fn chain_config(cfg: &RunConfig, lipschitz: f64) -> ChainConfig {
    let m = &cfg.method;
    let step = m
        .step_size
        .unwrap_or_else(|| m.step_fraction.unwrap_or(DEFAULT_STEP_FRACTION) / lipschitz);
    ChainConfig::new(step, m.burnin(), m.samples()).with_thinning(m.thinning.unwrap_or(1))
}

/// Construct the configured method for images of `shape`.
pub fn build_sampler(cfg: &RunConfig, model: &ObservationModel, shape: Shape) -> Result<Box<dyn PosteriorSampler>> {
    let m = &cfg.method;
    let op = model.operator(shape)?;
    Ok(match m.name.as_str() {
        "exact-gaussian" => Box::new(ExactGaussianSampler::new(
            exact_prior(cfg, shape)?,
            model.clone(),
            &chain_config(cfg, 1.0),
        )?),
        "gibbs-gmrf" => {
            let prior = GmrfPrior::new(m.delta0.unwrap_or(1.0), m.dc_ridge.unwrap_or(DEFAULT_DC_RIDGE))?;
            let d = GibbsHyperPriors::default();
            let hyper = GibbsHyperPriors {
                a_delta: m.a_delta.unwrap_or(d.a_delta),
                b_delta: m.b_delta.unwrap_or(d.b_delta),
                a_gamma: m.a_gamma.unwrap_or(d.a_gamma),
                b_gamma: m.b_gamma.unwrap_or(d.b_gamma),
            };
            let opts = GibbsOptions {
                update_delta: m.update_delta.unwrap_or(true),
                update_gamma: m.update_gamma.unwrap_or(true),
                gamma0: None,
            };
            Box::new(GibbsSampler::new(model, shape, &prior, hyper, opts, chain_config(cfg, 1.0))?)
        }
        "tv-sapg" => {
            let theta = m.theta.unwrap_or(1.0 / op.lipschitz());
            let chain = chain_config(cfg, op.lipschitz() + 1.0 / theta);
            let mut opts = SapgOptions::new(theta, chain.step_size, m.sapg_iterations.unwrap_or(DEFAULT_SAPG_ITERATIONS));
            opts.lambda0 = m.lambda0;
            opts.lambda_bounds = (m.lambda_min.unwrap_or(1e-3), m.lambda_max.unwrap_or(1e3));
            Box::new(TvSapgSampler::new(model, shape, TvPotential::new(1.0)?, opts, chain)?)
        }
        "crr" => {
            let lambda = m.lambda.unwrap_or(DEFAULT_CRR_LAMBDA);
            let crr = match &m.weights {
                Some(path) => CrrModel::load(path)
                    .with_context(|| format!("loading CRR weights from {}", path.display()))?
                    .with_lambda(lambda)?,
                None => CrrModel::builtin(lambda)?,
            };
            let chain = chain_config(cfg, op.lipschitz() + crr.lipschitz(shape));
            Box::new(CrrSampler::new(model, shape, crr, chain)?)
        }
        "pnp-ula" => {
            let denoiser = m.denoiser.clone().context("pnp-ula needs a denoiser")?;
            let lip = op.lipschitz() + 1.0 / denoiser.epsilon() + 1.0 / m.proj_lambda();
            Box::new(PnpUlaSampler::new(
                model,
                shape,
                denoiser,
                m.proj_box(),
                m.proj_lambda(),
                chain_config(cfg, lip),
            )?)
        }
        "external" => {
            let endpoint = m.endpoint.as_deref().context("external needs an endpoint")?;
            Box::new(ExternalSampler::new(endpoint.parse()?, shape, m.samples())?)
        }
        other => bail!("unknown method '{other}'"),
    })
}

/// Configuration echo stored in the report. The output directory is left
/// out so that the same experiment written to two places compares equal.
fn config_echo(cfg: &RunConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output_dir");
    }
    Ok(v)
}

/// Run the audit, write the bundle into `out`, and return the report.
pub fn audit(cfg: &RunConfig, out: &Path) -> Result<CoverageReport> {
    let dataset = resolve_dataset(cfg)?;
    let shape = dataset.common_shape()?;
    let model = observation_model(cfg, Some(&dataset))?;
    let sampler = build_sampler(cfg, &model, shape)?;
    info!(
        "auditing {} on {} images of {shape}, {} trials",
        sampler.name(),
        dataset.len(),
        cfg.audit.n_trials
    );
    let report = run_audit_with_echo(
        &dataset,
        sampler.as_ref(),
        &model,
        &cfg.audit.to_core(),
        &cfg.name,
        config_echo(cfg)?,
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_bundle(&report, out)?;
    Ok(report)
}

/// Human-readable summary of a report, one line per level.
pub fn summary(report: &CoverageReport) -> Result<String> {
    let mut s = format!(
        "{} ({}): {} of {} trials completed\n",
        report.name, report.method, report.n_completed, report.n_requested
    );
    for row in &report.rows {
        s.push_str(&format!(
            "target={:.4} observed={:.4} ell_hat={:+.4} wilson=[{:.4}, {:.4}] {}\n",
            row.target_coverage,
            row.observed_coverage,
            row.ell_hat,
            row.wilson_low,
            row.wilson_high,
            classify(report, row.alpha)?
        ));
    }
    Ok(s)
}

/// What `sample` produced.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub mean_path: PathBuf,
    pub sheet_path: PathBuf,
    pub psnr: Option<f64>,
    pub lambda_hat: Option<f64>,
}

/// Run one chain on `observation` and write `mean.png` and `samples.png`.
pub fn sample(
    cfg: &RunConfig,
    observation: &Path,
    truth: Option<&Path>,
    count: usize,
    out: &Path,
) -> Result<SampleOutcome> {
    if count == 0 {
        bail!("--count must be at least 1");
    }
    let y = load_image(observation).with_context(|| format!("reading {}", observation.display()))?;
    let shape = y.shape();
    let model = observation_model(cfg, None)?;
    let sampler = build_sampler(cfg, &model, shape)?;
    let chain = sampler.sample(&y, &SeedPath::new(cfg.audit.seed))?;
    if chain.is_empty() {
        bail!("chain produced no samples");
    }
    let mean = chain.mean();
    let psnr = match truth {
        Some(p) => {
            let x = load_image(p).with_context(|| format!("reading {}", p.display()))?;
            Some(psnr(&x, &mean)?)
        }
        None => None,
    };
    let k = count.min(chain.len());
    let picked: Vec<_> = (0..k)
        .map(|i| chain.samples[i * chain.len() / k].clone())
        .collect();
    let columns = (k as f64).sqrt().ceil() as usize;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mean_path = out.join("mean.png");
    let sheet_path = out.join("samples.png");
    save_png16(&mean, &mean_path)?;
    save_png16(&contact_sheet(&picked, columns)?, &sheet_path)?;
    Ok(SampleOutcome {
        mean_path,
        sheet_path,
        psnr,
        lambda_hat: chain.scalars.get("lambda_hat").copied(),
    })
}

/// Merge reports into the comparison table.
pub fn table(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        bail!("table needs at least one report.json");
    }
    let entries = paths
        .iter()
        .map(|p| TableEntry::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_table(&entries)?)
}

/// Run the loopback conformance suite; returns the printable summary and
/// whether everything passed.
pub fn protocol_check(round_trips: usize, fuzz: usize, seed: u64) -> Result<(String, bool)> {
    let r = conformance_check(round_trips, fuzz, seed)?;
    let mut s = format!(
        "round trips: {}/{} bit-exact\nfuzzed frames: {}/{} rejected with an error frame\n",
        r.round_trips - r.round_trip_failures.len(),
        r.round_trips,
        r.fuzz_cases - r.fuzz_failures.len(),
        r.fuzz_cases
    );
    for f in r.round_trip_failures.iter().chain(&r.fuzz_failures) {
        s.push_str(&format!("  failure: {f}\n"));
    }
    Ok((s, r.passed()))
}
