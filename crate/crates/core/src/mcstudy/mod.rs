//! Monte Carlo studies of `u = ε⁻¹(θ̂ − θ₀)` against `N(0, Γ_H(θ₀)⁻¹)`.
//!
//! Replicate `k` of a study always draws its driver from stream
//! `(seed, k)`, whatever the noise level, so the studies at different `ε` are
//! run on matched drivers.

mod normality;

pub use normality::{normality_report, sample_cov, sample_mean, sym_sqrt, NormalityReport, MIN_SAMPLES};

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fbm::{lift, sample_fbm_with, HurstVector, SamplerKind, TimeGrid};
use crate::inference::{gamma_matrix, mle, EstimateRecord, GammaMatrix, LikelihoodContext, OptimizerConfig, TransformPlans};
use crate::io::{write_jsonl, CsvTable};
use crate::model::{builtin, ModelSpec};
use crate::rde::{solve_ode, solve_rde, sup_distance, OdePath};
use crate::rng::StreamKey;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "FRACMLE_THREADS";
/// A study is invalid when more than this fraction of replicates fail.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub model: String,
    pub theta0: Vec<f64>,
    pub hurst: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub n_replicates: usize,
    pub grid: TimeGrid,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Γ is evaluated on a grid this many times finer than the simulation grid.
    #[serde(default = "one")]
    pub gamma_refine: usize,
    #[serde(default)]
    pub sampler: SamplerKind,
}

fn one() -> usize {
    1
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(Error::Input("study.n_replicates must be at least 2".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::Input(format!("study.epsilons {:?} must be a non-empty subset of (0, 1]", self.epsilons)));
        }
        if self.gamma_refine == 0 {
            return Err(Error::Input("study.gamma_refine must be at least 1".into()));
        }
        TimeGrid::new(self.grid.horizon, self.grid.n_coarse, self.grid.refine_level)?;
        HurstVector::new(self.hurst.clone())?;
        self.optimizer.validate()?;
        let model = builtin(&self.model)?;
        model.check_theta(&self.theta0)?;
        if self.hurst.len() != model.r {
            return Err(Error::Input(format!("hurst has {} entries, model `{}` has r = {}", self.hurst.len(), model.name, model.r)));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Outcome of one replicate at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub epsilon: f64,
    pub replicate: u64,
    pub seed: u64,
    pub estimate: Option<EstimateRecord>,
    /// `ε ∇𝕃(θ₀)`.
    pub score: Option<Vec<f64>>,
    /// `ε² ∇²𝕃(θ₀)`, rows.
    pub hessian_scaled: Option<Vec<Vec<f64>>>,
    pub sup_distance: Option<f64>,
    pub failure: Option<String>,
}

impl ReplicateRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none() && self.estimate.is_some()
    }
}

/// Everything a study shares across replicates.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub model: ModelSpec,
    pub hurst: HurstVector,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub ode: OdePath,
    pub gamma: GammaMatrix,
    plans: TransformPlans,
}

impl Study {
    pub fn prepare(config: &StudyConfig) -> Result<Self> {
        config.validate()?;
        let model = builtin(&config.model)?;
        let hurst = HurstVector::new(config.hurst.clone())?;
        let grid = config.grid;
        let x0 = config.x0.clone().unwrap_or_else(|| model.default_x0.clone());
        let ode = solve_ode(&model, &config.theta0, &x0, &grid)?;
        let gamma = gamma_matrix(&model, &config.theta0, &x0, &hurst, &grid.refined(config.gamma_refine)?)?;
        let plans = TransformPlans::new(&hurst, &grid)?;
        Ok(Self { config: config.clone(), model, hurst, grid, x0, ode, gamma, plans })
    }

    fn context(&self, epsilon: f64, replicate: u64) -> Result<(LikelihoodContext, f64)> {
        let key = StreamKey::new(self.config.seed, replicate);
        let path = sample_fbm_with(&self.hurst, &self.grid, key, self.config.sampler)?;
        let rp = lift(&path);
        let traj = solve_rde(&self.model, &self.config.theta0, epsilon, &rp, &self.x0)?;
        let dist = sup_distance(&traj, &self.ode)?;
        let ctx = LikelihoodContext::with_plans(&self.model, &traj, &self.plans)?.with_theta0(&self.config.theta0);
        Ok((ctx, dist))
    }

    /// sample → lift → solve → transform → estimate, deterministic in `(seed, replicate)`.
    pub fn run_replicate(&self, epsilon: f64, replicate: u64) -> ReplicateRecord {
        let mut rec = ReplicateRecord {
            epsilon,
            replicate,
            seed: self.config.seed,
            estimate: None,
            score: None,
            hessian_scaled: None,
            sup_distance: None,
            failure: None,
        };
        let (ctx, dist) = match self.context(epsilon, replicate) {
            Ok(v) => v,
            Err(e) => {
                rec.failure = Some(e.to_string());
                return rec;
            }
        };
        rec.sup_distance = Some(dist);
        match ctx.evaluate(&self.config.theta0, 2) {
            Ok(ev) => {
                rec.score = ev.grad.map(|g| g.iter().map(|v| epsilon * v).collect());
                rec.hessian_scaled = ev.hessian.map(|h| {
                    (0..h.nrows()).map(|a| h.row(a).iter().map(|v| epsilon * epsilon * v).collect()).collect()
                });
            }
            Err(e) => {
                rec.failure = Some(e.to_string());
                return rec;
            }
        }
        match mle(&ctx, &self.config.optimizer) {
            Ok(est) => rec.estimate = Some(est),
            Err(e) => rec.failure = Some(e.to_string()),
        }
        rec
    }
}

/// One-off replicate; prefer [`Study::run_replicate`] in loops.
pub fn run_replicate(config: &StudyConfig, epsilon: f64, replicate: u64) -> Result<ReplicateRecord> {
    Ok(Study::prepare(config)?.run_replicate(epsilon, replicate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_u: Vec<f64>,
    pub cov_u: Vec<Vec<f64>>,
    /// `None` below [`MIN_SAMPLES`] successful replicates or for singular Γ.
    pub normality: Option<NormalityReport>,
    pub mean_sq_norm_u: f64,
    pub mean_norm_u: f64,
    pub mean_sup_dist: f64,
    pub score_mean: Vec<f64>,
    pub score_cov: Vec<Vec<f64>>,
    /// Mean Frobenius norm of `ε²∇²𝕃(θ₀) + Γ`.
    pub hessian_gap: f64,
    pub boundary_hits: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub model: String,
    pub theta0: Vec<f64>,
    pub gamma: GammaMatrix,
    /// `E|N(0, Γ⁻¹)|²` and `E|N(0, Γ⁻¹)|`.
    pub reference_sq_norm: Option<f64>,
    pub reference_norm: Option<f64>,
    pub per_epsilon: Vec<EpsilonSummary>,
    pub valid: bool,
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    if rows.is_empty() {
        Vec::new()
    } else {
        sample_mean(rows)
    }
}

fn cov_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.len() < 2 {
        return Vec::new();
    }
    let c = sample_cov(rows);
    (0..c.nrows()).map(|a| c.row(a).iter().copied().collect()).collect()
}

/// `E|X|` and `E|X|²` for `X ~ N(0, Γ⁻¹)`; the first by a seeded 20 000-draw average when `m > 1`.
fn gaussian_norm_reference(gamma: &GammaMatrix) -> Option<(f64, f64)> {
    let inv = gamma.inverse().ok()?;
    let sq = inv.trace();
    let m = inv.nrows();
    if m == 1 {
        return Some(((2.0 * inv[(0, 0)] / std::f64::consts::PI).sqrt(), sq));
    }
    let l = inv.cholesky()?.l();
    let mut rng = StreamKey::new(0, 0).aux_rng(11);
    let n = 20_000;
    let abs: f64 = (0..n)
        .map(|_| (&l * DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal))).norm())
        .sum::<f64>()
        / n as f64;
    Some((abs, sq))
}

fn summarize_epsilon(epsilon: f64, records: &[&ReplicateRecord], gamma: &GammaMatrix) -> EpsilonSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().copied().filter(|r| r.ok()).collect();
    let n_failed = records.len() - ok.len();
    let us: Vec<Vec<f64>> = ok.iter().filter_map(|r| r.estimate.as_ref()?.u.clone()).collect();
    let scores: Vec<Vec<f64>> = ok.iter().filter_map(|r| r.score.clone()).collect();
    let nf = us.len().max(1) as f64;
    let mean_sq_norm_u = us.iter().map(|u| u.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / nf;
    let mean_norm_u = us.iter().map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / nf;
    let dists: Vec<f64> = ok.iter().filter_map(|r| r.sup_distance).collect();
    let mean_sup_dist = dists.iter().sum::<f64>() / dists.len().max(1) as f64;
    let gaps: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.hessian_scaled.as_ref())
        .map(|h| {
            let m = h.len();
            let hm = DMatrix::from_fn(m, m, |a, b| h[a][b]);
            (hm + &gamma.matrix).norm()
        })
        .collect();
    let hessian_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    let normality = (us.len() >= MIN_SAMPLES).then(|| normality_report(&us, &gamma.matrix).ok()).flatten();
    EpsilonSummary {
        epsilon,
        n_ok: ok.len(),
        n_failed,
        mean_u: mean_rows(&us),
        cov_u: cov_rows(&us),
        normality,
        mean_sq_norm_u,
        mean_norm_u,
        mean_sup_dist,
        score_mean: mean_rows(&scores),
        score_cov: cov_rows(&scores),
        hessian_gap,
        boundary_hits: ok.iter().filter(|r| r.estimate.as_ref().is_some_and(|e| e.boundary_flag)).count(),
        valid: (n_failed as f64) <= MAX_FAILED_FRACTION * records.len() as f64,
    }
}

/// Aggregates records (in any order) into per-ε summaries, in the order of
/// `config.epsilons`.
pub fn summarize(study: &Study, records: &[ReplicateRecord]) -> StudySummary {
    let reference = gaussian_norm_reference(&study.gamma);
    let per_epsilon: Vec<EpsilonSummary> = study
        .config
        .epsilons
        .iter()
        .map(|&eps| {
            let group: Vec<&ReplicateRecord> = records.iter().filter(|r| r.epsilon == eps).collect();
            summarize_epsilon(eps, &group, &study.gamma)
        })
        .collect();
    let valid = per_epsilon.iter().all(|s| s.valid);
    if !valid {
        log::warn!("more than {:.0}% of replicates failed at some ε; study marked invalid", MAX_FAILED_FRACTION * 100.0);
    }
    StudySummary {
        model: study.model.name.clone(),
        theta0: study.config.theta0.clone(),
        gamma: study.gamma.clone(),
        reference_norm: reference.map(|r| r.0),
        reference_sq_norm: reference.map(|r| r.1),
        per_epsilon,
        valid,
    }
}

/// Worker threads from [`THREADS_ENV`]; `None` means one per logical core.
pub fn configured_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::Input(format!("{THREADS_ENV} = `{v}` is not a thread count"))),
        },
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub summary: StudySummary,
    /// Sorted by first ε position in the config, then replicate.
    pub records: Vec<ReplicateRecord>,
}

/// Runs every `(ε, replicate)` pair in parallel (a repeated ε runs once), then aggregates and, when
/// `output_dir` is set, writes `records.jsonl`, `summary.csv`, `summary.json`
/// and `manifest.json`.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    let started = unix_now();
    let study = Study::prepare(config)?;
    let mut distinct: Vec<f64> = Vec::new();
    for &e in &config.epsilons {
        if !distinct.contains(&e) {
            distinct.push(e);
        }
    }
    let tasks: Vec<(f64, u64)> = distinct
        .iter()
        .flat_map(|&e| (0..config.n_replicates as u64).map(move |k| (e, k)))
        .collect();
    let run = || tasks.par_iter().map(|&(e, k)| study.run_replicate(e, k)).collect::<Vec<_>>();
    let records = match configured_threads()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Resource(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let summary = summarize(&study, &records);
    if let Some(dir) = &config.output_dir {
        write_artifacts(dir, config, &summary, &records, started)?;
    }
    Ok(StudyOutcome { summary, records })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn summary_table(summary: &StudySummary) -> CsvTable {
    let m = summary.theta0.len();
    let mut header = vec!["epsilon".to_string(), "n_ok".into(), "n_failed".into()];
    header.extend((1..=m).map(|j| format!("mean_u_{j}")));
    for a in 1..=m {
        header.extend((1..=m).map(|b| format!("cov_u_{a}{b}")));
    }
    header.push("cov_rel_error".into());
    header.extend((1..=m).map(|j| format!("skew_{j}")));
    header.extend((1..=m).map(|j| format!("kurt_{j}")));
    header.push("mean_sup_dist".into());
    let rows = summary
        .per_epsilon
        .iter()
        .map(|s| {
            let nan = |v: Option<f64>| v.map_or("NaN".to_string(), |x| x.to_string());
            let mut row = vec![s.epsilon.to_string(), s.n_ok.to_string(), s.n_failed.to_string()];
            row.extend((0..m).map(|j| nan(s.mean_u.get(j).copied())));
            for a in 0..m {
                row.extend((0..m).map(|b| nan(s.cov_u.get(a).and_then(|r| r.get(b)).copied())));
            }
            let norm = s.normality.as_ref();
            row.push(nan(norm.map(|n| n.cov_rel_error)));
            row.extend((0..m).map(|j| nan(norm.map(|n| n.skewness[j]))));
            row.extend((0..m).map(|j| nan(norm.map(|n| n.excess_kurtosis[j]))));
            row.push(s.mean_sup_dist.to_string());
            row
        })
        .collect();
    CsvTable { header, rows }
}

fn write_artifacts(
    dir: &Path,
    config: &StudyConfig,
    summary: &StudySummary,
    records: &[ReplicateRecord],
    started: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("records.jsonl"), records)?;
    summary_table(summary).write(&dir.join("summary.csv"))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    let manifest = serde_json::json!({
        "config": config,
        "config_hash": config.hash(),
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_now(),
        "valid": summary.valid,
        "artifacts": ["records.jsonl", "summary.csv", "summary.json"],
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    crate::roughpath::least_squares_slope(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(eps: Vec<f64>, n: usize) -> StudyConfig {
        StudyConfig {
            model: "linear1d".into(),
            theta0: vec![1.0],
            hurst: vec![0.4],
            epsilons: eps,
            n_replicates: n,
            grid: TimeGrid::new(1.0, 64, 0).unwrap(),
            x0: None,
            optimizer: OptimizerConfig::default(),
            seed: 17,
            output_dir: None,
            gamma_refine: 1,
            sampler: SamplerKind::Circulant,
        }
    }

    #[test]
    fn replicates_are_deterministic() {
        let study = Study::prepare(&config(vec![0.1], 2)).unwrap();
        let a = study.run_replicate(0.1, 3);
        let b = study.run_replicate(0.1, 3);
        assert_eq!(a, b);
        assert!(a.ok());
        assert_ne!(a, study.run_replicate(0.1, 4));
    }

    #[test]
    fn repeated_epsilons_share_records() {
        let one = run_study(&config(vec![0.1], 8)).unwrap();
        let two = run_study(&config(vec![0.1, 0.1], 8)).unwrap();
        assert_eq!(two.records.len(), 8);
        assert_eq!(two.summary.per_epsilon, vec![one.summary.per_epsilon[0].clone(); 2]);
    }

    #[test]
    fn matched_drivers_across_noise_levels() {
        let out = run_study(&config(vec![0.2, 0.1], 4)).unwrap();
        assert_eq!(out.records.len(), 8);
        assert!(out.records[..4].iter().all(|r| r.epsilon == 0.2));
        let study = Study::prepare(&config(vec![0.1], 4)).unwrap();
        assert_eq!(out.records[6], study.run_replicate(0.1, 2));
        assert!(out.summary.valid);
        assert_eq!(out.summary.per_epsilon[1].n_ok, 4);
    }

    #[test]
    fn artifacts_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(vec![0.2, 0.1], 6);
        cfg.output_dir = Some(dir.path().join("a"));
        run_study(&cfg).unwrap();
        cfg.output_dir = Some(dir.path().join("b"));
        run_study(&cfg).unwrap();
        let a = std::fs::read(dir.path().join("a/records.jsonl")).unwrap();
        let b = std::fs::read(dir.path().join("b/records.jsonl")).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 12);
        let csv = std::fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
        assert!(csv.starts_with("epsilon,n_ok,n_failed,mean_u_1,cov_u_11,cov_rel_error,skew_1,kurt_1,mean_sup_dist"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 17);
        assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn invalid_configs() {
        assert!(config(vec![0.1], 1).validate().is_err());
        assert!(config(vec![1.5], 5).validate().is_err());
        assert!(config(vec![], 5).validate().is_err());
        let mut c = config(vec![0.1], 5);
        c.hurst = vec![0.6];
        assert!(c.validate().is_err());
        c.hurst = vec![0.4, 0.4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn slope_of_a_power_law() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
