//! Run configuration: one TOML file per experiment.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uqaudit_core::audit::DEFAULT_ALPHAS;
use uqaudit_core::priors::DenoiserSpec;
use uqaudit_core::samplers::{DEFAULT_PROJ_BOX, DEFAULT_PROJ_LAMBDA};
use uqaudit_core::{GaussianPrior, Kernel, RegionKind, Shape, TrialSampling};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "UQAUDIT_OUT";

pub const METHODS: [&str; 6] = ["gibbs-gmrf", "tv-sapg", "crr", "pnp-ula", "exact-gaussian", "external"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub observation: ObservationConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub audit: AuditSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("uqaudit-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory of PNG/PGM images.
    pub directory: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// Mode variances `scale / (0.1 + ℓ_k)`.
    Smooth,
    /// White field of variance `scale`.
    Isotropic,
}

/// Gaussian random fields drawn as stand-in ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_field_kind")]
    pub kind: FieldKind,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_field_kind() -> FieldKind {
    FieldKind::Smooth
}
fn default_size() -> usize {
    16
}
fn default_count() -> usize {
    100
}
fn default_scale() -> f64 {
    1.0
}

impl SyntheticConfig {
    pub fn prior(&self) -> uqaudit_core::Result<GaussianPrior> {
        let shape = Shape::new(self.size, self.size);
        match self.kind {
            FieldKind::Smooth => GaussianPrior::smooth(shape, self.mean, self.scale),
            FieldKind::Isotropic => GaussianPrior::isotropic(shape, self.mean, self.scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// `identity` or `uniform-N` (N odd).
    #[serde(default = "default_kernel")]
    pub kernel: String,
    pub sigma: Option<f64>,
    pub bsnr_db: Option<f64>,
}

fn default_kernel() -> String {
    "uniform-5".into()
}

pub fn parse_kernel(preset: &str) -> Result<Kernel, String> {
    if preset == "identity" {
        return Ok(Kernel::identity());
    }
    let size = preset
        .strip_prefix("uniform-")
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| format!("observation.kernel: unknown preset '{preset}' (expected identity or uniform-N)"))?;
    Kernel::uniform(size).map_err(|e| format!("observation.kernel: {e}"))
}

/// Method selection plus every method's parameters; fields that do not
/// apply to the chosen method are ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    /// Explicit Langevin step; when absent, `step_fraction / L`.
    pub step_size: Option<f64>,
    pub step_fraction: Option<f64>,
    pub n_samples: Option<usize>,
    pub n_burnin: Option<usize>,
    pub thinning: Option<usize>,

    // exact-gaussian
    pub prior_kind: Option<FieldKind>,
    pub prior_mean: Option<f64>,
    pub prior_scale: Option<f64>,
    /// Multiplies the assumed prior's mode variances (misspecification studies).
    pub prior_factor: Option<f64>,

    // gibbs-gmrf
    pub delta0: Option<f64>,
    pub dc_ridge: Option<f64>,
    pub a_delta: Option<f64>,
    pub b_delta: Option<f64>,
    pub a_gamma: Option<f64>,
    pub b_gamma: Option<f64>,
    pub update_delta: Option<bool>,
    pub update_gamma: Option<bool>,

    // tv-sapg
    pub theta: Option<f64>,
    pub lambda0: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub sapg_iterations: Option<usize>,

    // crr
    pub weights: Option<PathBuf>,
    pub lambda: Option<f64>,

    // pnp-ula
    pub denoiser: Option<DenoiserSpec>,
    pub proj_min: Option<f64>,
    pub proj_max: Option<f64>,
    pub proj_lambda: Option<f64>,

    // external
    pub endpoint: Option<String>,
}

pub const DEFAULT_STEP_FRACTION: f64 = 0.9;
pub const DEFAULT_SAPG_ITERATIONS: usize = 2000;
pub const DEFAULT_CRR_LAMBDA: f64 = 1.0;

impl MethodConfig {
    pub fn default_samples(&self) -> usize {
        match self.name.as_str() {
            "crr" => 40_000,
            "pnp-ula" => 50_000,
            "exact-gaussian" | "external" => 2_000,
            _ => 20_000,
        }
    }

    pub fn samples(&self) -> usize {
        self.n_samples.unwrap_or_else(|| self.default_samples())
    }

    /// Burn-in defaults to 20% of the sample budget.
    pub fn burnin(&self) -> usize {
        self.n_burnin.unwrap_or(self.samples() / 5)
    }

    pub fn proj_box(&self) -> (f64, f64) {
        (
            self.proj_min.unwrap_or(DEFAULT_PROJ_BOX.0),
            self.proj_max.unwrap_or(DEFAULT_PROJ_BOX.1),
        )
    }

    pub fn proj_lambda(&self) -> f64 {
        self.proj_lambda.unwrap_or(DEFAULT_PROJ_LAMBDA)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_region")]
    pub region: RegionKind,
    #[serde(default)]
    pub sampling: TrialSampling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_trials() -> usize {
    2500
}
fn default_region() -> RegionKind {
    RegionKind::Ball
}
fn default_failure_rate() -> f64 {
    0.05
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            n_trials: default_trials(),
            region: default_region(),
            sampling: TrialSampling::default(),
            seed: 0,
            max_failure_rate: default_failure_rate(),
        }
    }
}

impl AuditSection {
    pub fn to_core(&self) -> uqaudit_core::AuditConfig {
        let mut cfg = uqaudit_core::AuditConfig::new(self.alphas.clone(), self.n_trials, self.region, self.seed);
        cfg.sampling = self.sampling;
        cfg.max_failure_rate = self.max_failure_rate;
        cfg
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn positive(errors: &mut Vec<String>, field: &str, value: Option<f64>) {
    if let Some(v) = value {
        if !(v > 0.0 && v.is_finite()) {
            errors.push(format!("{field} must be positive, got {v}"));
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        // relative paths are relative to the config file
        if let Some(base) = path.parent() {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(dir) = cfg.dataset.directory.as_mut() {
                resolve(dir);
            }
            if let Some(w) = cfg.method.weights.as_mut() {
                resolve(w);
            }
        }
        Ok(cfg)
    }

    /// Check everything that can be checked without touching the dataset.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        if self.name.trim().is_empty() {
            errors.push("name must not be empty".into());
        }

        match (&self.dataset.directory, &self.dataset.synthetic) {
            (Some(_), Some(_)) => errors.push("dataset.directory and dataset.synthetic are mutually exclusive".into()),
            (None, None) => errors.push("dataset needs either directory or synthetic".into()),
            (_, Some(s)) => {
                if s.size == 0 {
                    errors.push("dataset.synthetic.size must be at least 1".into());
                }
                if s.count == 0 {
                    errors.push("dataset.synthetic.count must be at least 1".into());
                }
                positive(&mut errors, "dataset.synthetic.scale", Some(s.scale));
            }
            _ => {}
        }

        if let Err(e) = parse_kernel(&self.observation.kernel) {
            errors.push(e);
        }
        match (self.observation.sigma, self.observation.bsnr_db) {
            (Some(_), Some(_)) => errors.push("observation.sigma and observation.bsnr_db are mutually exclusive".into()),
            (None, None) => errors.push("observation needs one of sigma or bsnr_db".into()),
            (Some(s), None) => positive(&mut errors, "observation.sigma", Some(s)),
            (None, Some(b)) if !b.is_finite() => errors.push("observation.bsnr_db must be finite".into()),
            _ => {}
        }

        let m = &self.method;
        if !METHODS.contains(&m.name.as_str()) {
            errors.push(format!("method.name '{}' is not one of {}", m.name, METHODS.join(", ")));
        }
        positive(&mut errors, "method.step_size", m.step_size);
        if let Some(f) = m.step_fraction {
            if !(f > 0.0 && f <= 1.0) {
                errors.push(format!("method.step_fraction must lie in (0, 1], got {f}"));
            }
        }
        if m.step_size.is_some() && m.step_fraction.is_some() {
            errors.push("method.step_size and method.step_fraction are mutually exclusive".into());
        }
        if m.n_samples == Some(0) {
            errors.push("method.n_samples must be at least 1".into());
        }
        if m.thinning == Some(0) {
            errors.push("method.thinning must be at least 1".into());
        }
        for (field, value) in [
            ("method.prior_scale", m.prior_scale),
            ("method.prior_factor", m.prior_factor),
            ("method.delta0", m.delta0),
            ("method.dc_ridge", m.dc_ridge),
            ("method.a_delta", m.a_delta),
            ("method.b_delta", m.b_delta),
            ("method.a_gamma", m.a_gamma),
            ("method.b_gamma", m.b_gamma),
            ("method.theta", m.theta),
            ("method.lambda0", m.lambda0),
            ("method.lambda_min", m.lambda_min),
            ("method.lambda_max", m.lambda_max),
            ("method.lambda", m.lambda),
            ("method.proj_lambda", m.proj_lambda),
        ] {
            positive(&mut errors, field, value);
        }
        match m.name.as_str() {
            "exact-gaussian" if self.dataset.synthetic.is_none() && m.prior_scale.is_none() => errors.push(
                "exact-gaussian on a directory dataset needs method.prior_scale (and optionally prior_kind, prior_mean)".into(),
            ),
            "tv-sapg" => {
                let lo = m.lambda_min.unwrap_or(1e-3);
                let hi = m.lambda_max.unwrap_or(1e3);
                if lo >= hi {
                    errors.push(format!("method.lambda_min ({lo}) must be below method.lambda_max ({hi})"));
                }
                if m.sapg_iterations == Some(0) {
                    errors.push("method.sapg_iterations must be at least 1".into());
                }
            }
            "pnp-ula" => match &m.denoiser {
                None => errors.push("pnp-ula needs a [method.denoiser] table".into()),
                Some(d) => {
                    if let Err(e) = d.validate() {
                        errors.push(format!("method.denoiser: {e}"));
                    }
                }
            },
            "external" => match &m.endpoint {
                None => errors.push("external needs method.endpoint".into()),
                Some(e) => {
                    if let Err(err) = e.parse::<uqaudit_core::protocol::Endpoint>() {
                        errors.push(format!("method.endpoint: {err}"));
                    }
                }
            },
            _ => {}
        }
        let (lo, hi) = m.proj_box();
        if m.name == "pnp-ula" && lo > hi {
            errors.push(format!("method.proj_min ({lo}) exceeds method.proj_max ({hi})"));
        }

        if let Err(e) = self.audit.to_core().validate() {
            errors.push(format!("audit: {e}"));
        }
        if self.audit.region == RegionKind::Hpd && matches!(m.name.as_str(), "gibbs-gmrf" | "pnp-ula" | "external") {
            errors.push(format!(
                "audit.region = \"hpd\" needs an evaluable prior potential; method '{}' supports only \"ball\"",
                m.name
            ));
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORACLE: &str = r#"
name = "oracle"

[dataset.synthetic]
size = 16
count = 50

[observation]
kernel = "uniform-3"
sigma = 0.05

[method]
name = "exact-gaussian"
n_samples = 500

[audit]
alphas = [0.05, 0.1, 0.5]
n_trials = 100
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = RunConfig::from_toml(ORACLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.audit.region, RegionKind::Ball);
        assert_eq!(cfg.method.burnin(), 100);
    }

    #[test]
    fn sigma_and_bsnr_both_named() {
        let text = ORACLE.replace("sigma = 0.05", "sigma = 0.05\nbsnr_db = 30");
        let err = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("observation.sigma") && msg.contains("observation.bsnr_db"), "{msg}");
    }

    #[test]
    fn reports_every_violation() {
        let text = ORACLE
            .replace("sigma = 0.05", "sigma = -1")
            .replace("exact-gaussian", "nope")
            .replace("[0.05, 0.1, 0.5]", "[0.5, 0.1]")
            .replace("uniform-3", "uniform-4");
        let err = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert_eq!(err.0.len(), 4, "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml(&ORACLE.replace("count = 50", "count = 50\ncolour = 1")).is_err());
    }

    #[test]
    fn hpd_needs_potential() {
        let text = ORACLE.replace("exact-gaussian", "gibbs-gmrf").replace("n_trials = 100", "n_trials = 100\nregion = \"hpd\"");
        assert!(RunConfig::from_toml(&text).unwrap().validate().is_err());
    }

    #[test]
    fn kernel_presets() {
        assert_eq!(parse_kernel("uniform-5").unwrap().height(), 5);
        assert_eq!(parse_kernel("identity").unwrap().taps(), &[1.0]);
        assert!(parse_kernel("gauss").is_err());
    }
}
