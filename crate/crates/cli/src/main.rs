mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fracmle::fbm::{lift, sample_fbm_with, FbmPath, RoughPath, SamplerKind};
use fracmle::inference::{gamma_matrix, mle, LikelihoodContext};
use fracmle::io::{read_trajectory_csv, write_areas_csv, write_driver_csv, write_trajectory_csv};
use fracmle::mcstudy::run_study;
use fracmle::model::probe_assumptions;
use fracmle::rde::{solve_rde, Trajectory};
use fracmle::rng::StreamKey;
use fracmle::selftest::run_selftest;

use config::{CliConfig, Validated};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<fracmle::Error> for CliError {
    fn from(e: fracmle::Error) -> Self {
        use fracmle::Error::*;
        match e {
            Input(_) | Domain(_) | UnknownModel(_) | Json(_) => Self::validation(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "fracmle", version, about = "Small-noise fBm SDE simulation and drift MLE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; required by every stochastic command.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory; writes trajectory.csv, driver.csv and areas.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Print the estimate for a trajectory file, or for a trajectory simulated from --seed.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "seed")]
        trajectory: Option<PathBuf>,
    },
    /// Run a Monte Carlo study and write its artifacts.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides study.n_replicates.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Print Γ_H(θ₀) and its inverse as JSON.
    Gamma {
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in consistency checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<Validated, CliError> {
    let path = common.config.as_deref().ok_or_else(|| CliError::validation("--config is required"))?;
    CliConfig::load(path)?.validate()
}

fn need_seed(common: &Common, command: &str) -> Result<u64, CliError> {
    common.seed.ok_or_else(|| CliError::validation(format!("`{command}` is stochastic and needs --seed")))
}

fn sampler(cfg: &Validated) -> SamplerKind {
    cfg.raw.study.as_ref().map(|s| s.sampler).unwrap_or_default()
}

fn simulate(cfg: &Validated, seed: u64, replicate: u64, eps: f64) -> Result<(FbmPath, RoughPath, Trajectory), CliError> {
    let path = sample_fbm_with(&cfg.hurst, &cfg.grid, StreamKey::new(seed, replicate), sampler(cfg))?;
    let rp = lift(&path);
    let mut traj = solve_rde(&cfg.model, &cfg.raw.model.theta0, eps, &rp, &cfg.x0)?;
    traj.seed = Some(seed);
    traj.replicate = Some(replicate);
    Ok((path, rp, traj))
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::runtime(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn cmd_simulate(common: &Common, out: Option<&Path>, replicate: u64) -> Result<(), CliError> {
    let cfg = load(common)?;
    let seed = need_seed(common, "simulate")?;
    let eps = cfg.single_epsilon()?;
    let (path, rp, traj) = simulate(&cfg, seed, replicate, eps)?;
    let dir = cfg.output_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    write_trajectory_csv(&traj, &dir.join("trajectory.csv"))?;
    write_driver_csv(&path, &dir.join("driver.csv"))?;
    write_areas_csv(&rp, &dir.join("areas.csv"))?;
    println!("{}", dir.join("trajectory.csv").display());
    Ok(())
}

fn cmd_estimate(common: &Common, trajectory: Option<&Path>) -> Result<(), CliError> {
    let cfg = load(common)?;
    let eps = cfg.single_epsilon()?;
    let theta0 = &cfg.raw.model.theta0;
    let traj = match (trajectory, common.seed) {
        (Some(file), _) => {
            if !file.exists() {
                return Err(CliError::validation(format!("trajectory file {} does not exist", file.display())));
            }
            let t = read_trajectory_csv(file, eps, theta0.clone())?;
            if t.dim() != cfg.model.d {
                return Err(CliError::validation(format!("trajectory has {} state columns, model needs {}", t.dim(), cfg.model.d)));
            }
            t
        }
        (None, Some(seed)) => simulate(&cfg, seed, 0, eps)?.2,
        (None, None) => return Err(CliError::validation("`estimate` needs --trajectory or --seed")),
    };
    let ctx = LikelihoodContext::new(&cfg.model, &traj, &cfg.hurst)?.with_theta0(theta0);
    log::info!("estimating on {} coarse steps", traj.grid.n_coarse);
    print_json(&mle(&ctx, &cfg.raw.optimizer)?)
}

fn cmd_mc(common: &Common, out: Option<&Path>, replicates: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load(common)?;
    let seed = need_seed(common, "mc")?;
    if let (Some(n), Some(study)) = (replicates, cfg.raw.study.as_mut()) {
        study.n_replicates = n;
    }
    let dir = cfg.output_dir(out);
    let study = cfg.study_config(seed, dir.clone())?;
    let outcome = run_study(&study)?;
    print_json(&outcome.summary)?;
    if !outcome.summary.valid {
        return Err(CliError::runtime(format!(
            "study invalid: too many failed replicates (see {})",
            dir.join("records.jsonl").display()
        )));
    }
    Ok(())
}

fn cmd_gamma(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let g = gamma_matrix(&cfg.model, &cfg.raw.model.theta0, &cfg.x0, &cfg.hurst, &cfg.grid)?;
    if let Some(w) = &g.warning {
        eprintln!("warning: {w}");
    }
    let assumptions = match &cfg.raw.probe {
        Some(p) => Some(probe_assumptions(&cfg.model, p, need_seed(common, "gamma with a probe section")?)?),
        None => None,
    };
    let mut v = serde_json::to_value(&g).map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(a) = assumptions {
        v["assumptions"] = json!(a);
    }
    print_json(&v)
}

fn cmd_selftest() -> Result<(), CliError> {
    let results = run_selftest();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} self-test check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, out, replicate } => cmd_simulate(common, out.as_deref(), *replicate),
        Command::Estimate { common, trajectory } => cmd_estimate(common, trajectory.as_deref()),
        Command::Mc { common, out, replicates } => cmd_mc(common, out.as_deref(), *replicates),
        Command::Gamma { common } => cmd_gamma(common),
        Command::Selftest { .. } => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
