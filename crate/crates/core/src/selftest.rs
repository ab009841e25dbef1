//! Fast internal consistency checks, run by `fracmle selftest`.

use serde::Serialize;

use crate::error::Result;
use crate::fbm::{chen_defect, lift, sample_fbm, HurstVector, TimeGrid};
use crate::fraccalc::{d_h, rl_integral_left, FracKernelPlan};
use crate::inference::{gamma_matrix, grad_log_likelihood, log_likelihood, mle, verify_transfer_identity, LikelihoodContext, OptimizerConfig};
use crate::model::{builtin, linear1d};
use crate::rde::solve_rde;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SelfTestResult {
    match f() {
        Ok((passed, detail)) => SelfTestResult { name, passed, detail },
        Err(e) => SelfTestResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn hv(h: f64) -> HurstVector {
    HurstVector::new(vec![h]).expect("valid Hurst index")
}

pub fn run_selftest() -> Vec<SelfTestResult> {
    vec![
        check("chen_relation", || {
            let grid = TimeGrid::new(1.0, 64, 3)?;
            let hurst = HurstVector::new(vec![0.4, 0.45])?;
            let rp = lift(&sample_fbm(&hurst, &grid, StreamKey::new(1, 0))?);
            let defect = chen_defect(&rp, 0.125, 0.5, 0.875)?.norm();
            Ok((defect <= 1e-12, format!("defect {defect:e}")))
        }),
        check("riemann_liouville_of_one", || {
            let grid = TimeGrid::new(1.0, 128, 0)?;
            let plan = FracKernelPlan::new(0.3, &grid)?;
            let out = rl_integral_left(&plan, &[1.0; 129])?;
            let exact = 1.0 / statrs::function::gamma::gamma(1.3);
            let err = (out[128] - exact).abs();
            Ok((err <= 1e-12, format!("error {err:e}")))
        }),
        check("d_h_at_brownian_limit", || {
            let d = d_h(0.5)?;
            Ok((d == 1.0, format!("d_0.5 = {d}")))
        }),
        check("likelihood_gradient", || {
            let model = linear1d();
            let grid = TimeGrid::new(1.0, 128, 0)?;
            let rp = lift(&sample_fbm(&hv(0.4), &grid, StreamKey::new(2, 0))?);
            let traj = solve_rde(&model, &[1.0], 0.2, &rp, &[1.0])?;
            let ctx = LikelihoodContext::new(&model, &traj, &hv(0.4))?;
            let g = grad_log_likelihood(&ctx, &[1.3])?[0];
            let h = 1e-5;
            let fd = (log_likelihood(&ctx, &[1.3 + h])? - log_likelihood(&ctx, &[1.3 - h])?) / (2.0 * h);
            let rel = (g - fd).abs() / fd.abs().max(1.0);
            Ok((rel <= 1e-6, format!("analytic {g}, central difference {fd}")))
        }),
        check("constant_drift_estimate", || {
            let model = builtin("constant_drift")?;
            let grid = TimeGrid::new(1.0, 128, 0)?;
            let rp = lift(&sample_fbm(&hv(0.4), &grid, StreamKey::new(3, 0))?);
            let traj = solve_rde(&model, &[2.0], 0.1, &rp, &model.default_x0)?;
            let ctx = LikelihoodContext::new(&model, &traj, &hv(0.4))?;
            let est = mle(&ctx, &OptimizerConfig::default())?;
            let g = grad_log_likelihood(&ctx, &est.theta_hat)?[0];
            Ok((est.converged && g.abs() <= 1e-6, format!("θ̂ = {}, score {g:e}", est.theta_hat[0])))
        }),
        check("seeded_determinism", || {
            let grid = TimeGrid::new(1.0, 64, 2)?;
            let a = sample_fbm(&hv(0.4), &grid, StreamKey::new(4, 7))?;
            let b = sample_fbm(&hv(0.4), &grid, StreamKey::new(4, 7))?;
            Ok((a == b, "two draws from the same stream".into()))
        }),
        check("gamma_positive", || {
            let g = gamma_matrix(&linear1d(), &[1.0], &[1.0], &hv(0.4), &TimeGrid::new(1.0, 256, 0)?)?;
            Ok((g.is_positive_definite(), format!("Γ = {}", g.matrix[(0, 0)])))
        }),
        check("transfer_identity", || {
            let model = linear1d();
            let grid = TimeGrid::new(1.0, 512, 2)?;
            let rp = lift(&sample_fbm(&hv(0.4), &grid, StreamKey::new(5, 0))?);
            let traj = solve_rde(&model, &[1.0], 0.1, &rp, &[1.0])?;
            let res = verify_transfer_identity(&traj, &model, &rp)?;
            Ok((res <= 0.02, format!("residual {res:e}")))
        }),
    ]
}
