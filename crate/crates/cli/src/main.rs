use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use uqaudit_cli::commands::{self, summary, Overrides};
use uqaudit_cli::RunConfig;

const CONFIG_HELP: &str = "\
Configuration file (TOML). Sections and defaults:

  name = \"...\"                  experiment name (required)
  output_dir = \"uqaudit-out\"    overridden by $UQAUDIT_OUT, then by --out

  [dataset]                     exactly one of:
    directory = \"path\"          PNG/PGM images, converted to gray in [0,1]
    [dataset.synthetic]         Gaussian random fields
      kind = \"smooth\"           smooth | isotropic
      size = 16, count = 100, mean = 0.0, scale = 1.0, seed = 0

  [observation]
    kernel = \"uniform-5\"        identity | uniform-N (N odd)
    sigma = ...  or  bsnr_db = ...   (exactly one)

  [method]
    name = gibbs-gmrf | tv-sapg | crr | pnp-ula | exact-gaussian | external
    step_size                   default step_fraction / L
    step_fraction = 0.9
    n_samples                   20000 (gibbs-gmrf, tv-sapg), 40000 (crr),
                                50000 (pnp-ula), 2000 (exact-gaussian, external)
    n_burnin = n_samples / 5, thinning = 1
    exact-gaussian: prior_kind, prior_mean = 0, prior_scale (default: the
                    synthetic prior), prior_factor = 1
    gibbs-gmrf:     delta0 = 1, dc_ridge = 1e-5, a_delta = b_delta =
                    a_gamma = b_gamma = 1e-3, update_delta = update_gamma = true
    tv-sapg:        theta = 1/L_f, lambda0 (default n / TV(y)), lambda_min = 1e-3,
                    lambda_max = 1e3, sapg_iterations = 2000
    crr:            weights (default: builtin filters), lambda = 1
    pnp-ula:        [method.denoiser] kind = builtin-gaussian-mmse {prior_var,
                    epsilon} | builtin-smoothing {kernel_size, epsilon} |
                    external {endpoint, epsilon}; proj_min = -0.5,
                    proj_max = 1.5, proj_lambda = 1
    external:       endpoint = \"tcp:HOST:PORT\" | \"unix:PATH\" | \"exec:CMD ARGS\"

  [audit]
    alphas = [0.001, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.5, 0.9, 0.99]
    n_trials = 2500, region = \"ball\" (ball | hpd), sampling = \"cyclic\"
    (cyclic | with-replacement), seed = 0, max_failure_rate = 0.05";

#[derive(Parser, Debug)]
#[command(name = "uqaudit", version, about = "Coverage audits for Bayesian imaging methods")]
struct Cli {
    #[arg(long, global = true, value_name = "PATH", long_help = CONFIG_HELP)]
    config: Option<PathBuf>,
    /// Output directory (beats $UQAUDIT_OUT and the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Audit / chain seed (beats the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Method name, replacing the one in the config.
    #[arg(long, global = true, value_name = "NAME")]
    method: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a coverage audit and write report.json, report.csv,
    /// coverage_curve.csv and trials.ndjson.
    Audit,
    /// Sample the posterior for one observed image; writes mean.png and samples.png.
    Sample {
        /// Observed (degraded) image.
        image: PathBuf,
        /// Ground truth; enables the PSNR line.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Samples shown in the contact sheet.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Merge report.json files into one comparison table.
    Table {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Check the external frame protocol over a loopback connection.
    ProtocolCheck {
        #[arg(long, default_value_t = 1000)]
        round_trips: usize,
        #[arg(long, default_value_t = 100)]
        fuzz: usize,
    },
}

fn load(cli: &Cli, overrides: &Overrides) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    overrides.apply(RunConfig::load(path)?)
}

fn run(cli: Cli) -> Result<bool> {
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        method: cli.method.clone(),
    };
    match &cli.command {
        Command::Audit => {
            let cfg = load(&cli, &overrides)?;
            let out = overrides.output_dir(&cfg);
            let report = commands::audit(&cfg, &out)?;
            print!("{}", summary(&report)?);
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Sample { image, truth, count } => {
            let cfg = load(&cli, &overrides)?;
            let out = overrides.output_dir(&cfg);
            let r = commands::sample(&cfg, image, truth.as_deref(), *count, &out)?;
            if let Some(l) = r.lambda_hat {
                println!("lambda_hat={l}");
            }
            if let Some(p) = r.psnr {
                println!("psnr={p:.4}");
            }
            println!("wrote {} and {}", r.mean_path.display(), r.sheet_path.display());
            Ok(true)
        }
        Command::Table { reports } => {
            let text = commands::table(reports)?;
            match &cli.out {
                Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::ProtocolCheck { round_trips, fuzz } => {
            let (text, passed) = commands::protocol_check(*round_trips, *fuzz, cli.seed.unwrap_or(0))?;
            print!("{text}");
            Ok(passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(e.into()),
        },
        None => run(cli),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
