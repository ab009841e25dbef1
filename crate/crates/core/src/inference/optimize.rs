//! Multistart projected Newton ascent of `𝕃` over the closed parameter box.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LikelihoodContext;
use crate::error::{Error, Result};
use crate::model::ParamBox;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    /// Convergence when the projected gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Relative distance (in units of the box width) that counts as "on the boundary".
    pub boundary_tol: f64,
    /// Seed of the start design; independent of any simulation seed.
    pub start_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { n_starts: 5, grad_tol: 1e-8, max_iter: 100, boundary_tol: 1e-6, start_seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 || self.max_iter == 0 {
            return Err(Error::Input("optimizer needs n_starts ≥ 1 and max_iter ≥ 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.boundary_tol >= 0.0) {
            return Err(Error::Input("optimizer tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub theta_hat: Vec<f64>,
    /// `ε⁻¹(θ̂ − θ₀)` when `θ₀` is known.
    pub u: Option<Vec<f64>>,
    pub converged: bool,
    pub boundary_flag: bool,
    pub iterations: usize,
    pub loglik: f64,
}

/// Latin-hypercube starts at stratum centres: coordinate `j` of start `s` is
/// the centre of stratum `π_j(s)` for a seeded permutation `π_j`.
pub fn lhs_starts(domain: &ParamBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = domain.dim();
    let mut rng = StreamKey::new(seed, 0).aux_rng(1);
    let mut starts = vec![vec![0.0; m]; n];
    for j in 0..m {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (s, &p) in perm.iter().enumerate() {
            starts[s][j] = domain.lower[j] + domain.width(j) * (p as f64 + 0.5) / n as f64;
        }
    }
    starts
}

struct StartResult {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

/// Coordinates pinned at a bound with the gradient pushing outward.
fn active_set(theta: &[f64], grad: &DVector<f64>, domain: &ParamBox) -> Vec<bool> {
    theta
        .iter()
        .enumerate()
        .map(|(j, &t)| (t <= domain.lower[j] && grad[j] < 0.0) || (t >= domain.upper[j] && grad[j] > 0.0))
        .collect()
}

fn ascent_direction(grad: &DVector<f64>, hess: &DMatrix<f64>, free: &[usize], domain: &ParamBox) -> DVector<f64> {
    let m = grad.len();
    let mut dir = DVector::zeros(m);
    let k = free.len();
    let g = DVector::from_fn(k, |a, _| grad[free[a]]);
    let neg_h = DMatrix::from_fn(k, k, |a, b| -hess[(free[a], free[b])]);
    if let Some(chol) = neg_h.cholesky() {
        let step = chol.solve(&g);
        for (a, &j) in free.iter().enumerate() {
            dir[j] = step[a];
        }
    } else {
        // not concave here: scaled steepest ascent
        let gn = g.norm();
        let span = free.iter().map(|&j| domain.width(j)).fold(f64::INFINITY, f64::min);
        for (a, &j) in free.iter().enumerate() {
            dir[j] = 0.25 * span * g[a] / gn;
        }
    }
    dir
}

fn run_start(ctx: &LikelihoodContext, start: &[f64], cfg: &OptimizerConfig) -> Result<StartResult> {
    let domain = &ctx.model.theta_domain;
    let mut theta = start.to_vec();
    let mut ev = ctx.evaluate(&theta, 2)?;
    for iter in 0..cfg.max_iter {
        let grad = ev.grad.clone().expect("order 2");
        let hess = ev.hessian.clone().expect("order 2");
        let active = active_set(&theta, &grad, domain);
        let free: Vec<usize> = (0..theta.len()).filter(|&j| !active[j]).collect();
        let pg = free.iter().map(|&j| grad[j] * grad[j]).sum::<f64>().sqrt();
        if pg <= cfg.grad_tol {
            return Ok(StartResult { theta, value: ev.value, converged: true, iterations: iter });
        }
        let dir = ascent_direction(&grad, &hess, &free, domain);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            domain.clamp(&mut trial);
            let moved = trial.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if moved == 0.0 {
                break;
            }
            let gain: f64 = trial.iter().zip(&theta).enumerate().map(|(j, (a, b))| grad[j] * (a - b)).sum();
            let trial_ev = ctx.evaluate(&trial, 2)?;
            if trial_ev.value >= ev.value + 1e-4 * gain {
                accepted = Some((trial, trial_ev, moved));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, trial_ev, moved)) => {
                let scale = 1.0 + theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                theta = trial;
                ev = trial_ev;
                if moved <= 1e-14 * scale {
                    return Ok(StartResult { theta, value: ev.value, converged: true, iterations: iter + 1 });
                }
            }
            None => {
                // no ascent possible along the projected direction: stationary to working precision
                let converged = pg <= cfg.grad_tol.sqrt() * (1.0 + ev.value.abs());
                return Ok(StartResult { theta, value: ev.value, converged, iterations: iter + 1 });
            }
        }
    }
    let grad = ev.grad.clone().expect("order 2");
    let active = active_set(&theta, &grad, domain);
    let pg = (0..theta.len()).filter(|&j| !active[j]).map(|j| grad[j] * grad[j]).sum::<f64>().sqrt();
    Ok(StartResult { theta, value: ev.value, converged: pg <= cfg.grad_tol, iterations: cfg.max_iter })
}

/// `θ̂ = argmax_{θ ∈ Θ̄} 𝕃(θ)` from `cfg.n_starts` Latin-hypercube starts.
pub fn mle(ctx: &LikelihoodContext, cfg: &OptimizerConfig) -> Result<EstimateRecord> {
    cfg.validate()?;
    let domain = &ctx.model.theta_domain;
    let mut best: Option<StartResult> = None;
    let mut failures = Vec::new();
    for start in lhs_starts(domain, cfg.n_starts, cfg.start_seed) {
        match run_start(ctx, &start, cfg) {
            Ok(res) if res.converged => {
                if best.as_ref().is_none_or(|b| res.value > b.value) {
                    best = Some(res);
                }
            }
            Ok(res) => failures.push(format!("start {start:?}: stopped at {:?} after {} iterations", res.theta, res.iterations)),
            Err(e) => failures.push(format!("start {start:?}: {e}")),
        }
    }
    let best = best.ok_or_else(|| Error::Optimization(format!("no start converged: {}", failures.join("; "))))?;
    let boundary_flag = best.theta.iter().enumerate().any(|(j, &t)| {
        let tol = cfg.boundary_tol * domain.width(j);
        t - domain.lower[j] <= tol || domain.upper[j] - t <= tol
    });
    let u = ctx
        .theta0
        .as_ref()
        .map(|t0| best.theta.iter().zip(t0).map(|(a, b)| (a - b) / ctx.epsilon).collect());
    Ok(EstimateRecord {
        theta_hat: best.theta,
        u,
        converged: true,
        boundary_flag,
        iterations: best.iterations,
        loglik: best.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::HurstVector;
    use crate::inference::tests::simulate;
    use crate::model::{builtin, constant_drift, linear1d};

    #[test]
    fn lhs_covers_every_stratum_once() {
        let dom = ParamBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let s = lhs_starts(&dom, 5, 3);
        for j in 0..2 {
            let mut strata: Vec<usize> =
                s.iter().map(|p| ((p[j] - dom.lower[j]) / dom.width(j) * 5.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, vec![0, 1, 2, 3, 4]);
        }
        assert_eq!(s, lhs_starts(&dom, 5, 3));
    }

    #[test]
    fn constant_drift_matches_closed_form() {
        let model = constant_drift();
        for (theta0, eps, seed) in [(1.0, 0.2, 1), (-2.0, 0.5, 2), (4.8, 1.0, 3)] {
            let traj = simulate(&model, &[theta0], eps, 0.4, 256, seed);
            let ctx = LikelihoodContext::new(&model, &traj, &HurstVector::new(vec![0.4]).unwrap()).unwrap();
            let q = ctx.q_field(&[1.0], 0).unwrap();
            let s1 = ctx.dz_sum(0, &q.values[0]);
            let s2 = ctx.product_integral(0, &q.values[0], &q.values[0]);
            let closed = (s1 / s2).clamp(-5.0, 5.0);
            let est = mle(&ctx, &OptimizerConfig::default()).unwrap();
            assert!((est.theta_hat[0] - closed).abs() <= 1e-8, "{} vs {closed}", est.theta_hat[0]);
            assert!(est.converged);
        }
    }

    #[test]
    fn argmax_beats_the_truth_and_flags_boundaries() {
        let model = linear1d();
        let traj = simulate(&model, &[1.0], 0.1, 0.4, 256, 9);
        let ctx = LikelihoodContext::new(&model, &traj, &HurstVector::new(vec![0.4]).unwrap())
            .unwrap()
            .with_theta0(&[1.0]);
        let est = mle(&ctx, &OptimizerConfig::default()).unwrap();
        assert!(est.loglik >= ctx.evaluate(&[1.0], 0).unwrap().value);
        let u = est.u.unwrap();
        assert!((u[0] - (est.theta_hat[0] - 1.0) / 0.1).abs() < 1e-12);

        let mut narrow = linear1d();
        narrow.theta_domain = ParamBox::new(vec![0.9], vec![1.1]).unwrap();
        let flagged = (0..20).any(|seed| {
            let traj = simulate(&narrow, &[1.05], 0.5, 0.4, 128, seed);
            let ctx = LikelihoodContext::new(&narrow, &traj, &HurstVector::new(vec![0.4]).unwrap()).unwrap();
            mle(&ctx, &OptimizerConfig::default()).unwrap().boundary_flag
        });
        assert!(flagged);
    }

    #[test]
    fn two_parameter_model_converges() {
        let model = builtin("cross2d").unwrap();
        let traj = simulate(&model, &[1.0, 2.0], 0.05, 0.4, 256, 4);
        let ctx = LikelihoodContext::new(&model, &traj, &HurstVector::new(vec![0.4, 0.4]).unwrap()).unwrap();
        let est = mle(&ctx, &OptimizerConfig::default()).unwrap();
        assert!(est.converged && !est.boundary_flag, "{est:?}");
        assert!((est.theta_hat[0] - 1.0).abs() < 0.5 && (est.theta_hat[1] - 2.0).abs() < 0.5, "{est:?}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = OptimizerConfig { n_starts: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
