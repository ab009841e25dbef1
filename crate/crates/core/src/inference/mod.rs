//! Observation transforms, the function `Q`, and the log-likelihood.
//!
//! From a discretely observed trajectory `X^ε` the pipeline builds
//!
//! * `Y = ε⁻¹ ∫ σ*A⁻¹(X) ∘ dX`, which equals `ε⁻¹∫ σ*A⁻¹ b dt + B`;
//! * `Z^i = ∫₀^t κ_{H_i}(t, s) dY^i_s`, a Wiener process plus `∫ Q dt`;
//! * `Q^i(t) = (ε d_{H_i})⁻¹ t^{−a_i} I^{a_i}_{0+}[s^{a_i} (σ*A⁻¹ b)^i](t)`, `a_i = 1/2 − H_i`;
//!
//! and evaluates `𝕃(θ) = Σ_i [∫ Q^i dZ^i − ½ ∫ (Q^i)² dt]` with its first two
//! θ-derivatives.

mod limit;
mod optimize;
mod transfer;

pub use limit::{
    gamma_matrix, identifiability_scan, theta_grid, y_eps_field, y_limit_field, GammaMatrix, IdentifiabilityScan,
};
pub use optimize::{lhs_starts, mle, EstimateRecord, OptimizerConfig};
pub use transfer::verify_transfer_identity;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fbm::{HurstVector, TimeGrid};
use crate::fraccalc::{d_h, power_start_trapezoid, rl_integral_left_power, FracKernelPlan, InverseKernel};
use crate::model::ModelSpec;
use crate::rde::Trajectory;

/// Fractional-integral plans and inverse kernels for every driver component,
/// shared between components with equal Hurst index.
#[derive(Debug, Clone)]
pub struct TransformPlans {
    grid: TimeGrid,
    hurst: HurstVector,
    frac: Vec<Option<Arc<FracKernelPlan>>>,
    inverse: Vec<Arc<InverseKernel>>,
    d: Vec<f64>,
}

impl TransformPlans {
    pub fn new(hurst: &HurstVector, grid: &TimeGrid) -> Result<Self> {
        Self::build(hurst, grid, true)
    }

    /// Plans for `Q` only; [`build_z`] refuses these.
    pub fn fractional_only(hurst: &HurstVector, grid: &TimeGrid) -> Result<Self> {
        Self::build(hurst, grid, false)
    }

    fn build(hurst: &HurstVector, grid: &TimeGrid, with_inverse: bool) -> Result<Self> {
        let mut cache: HashMap<u64, (Option<Arc<FracKernelPlan>>, Option<Arc<InverseKernel>>)> = HashMap::new();
        let mut frac = Vec::with_capacity(hurst.len());
        let mut inverse = Vec::with_capacity(hurst.len());
        let mut d = Vec::with_capacity(hurst.len());
        for &h in hurst.values() {
            let entry = match cache.get(&h.to_bits()) {
                Some(e) => e.clone(),
                None => {
                    let e = (
                        FracKernelPlan::for_hurst(h, grid)?.map(Arc::new),
                        if with_inverse { Some(Arc::new(InverseKernel::new(h, grid)?)) } else { None },
                    );
                    cache.insert(h.to_bits(), e.clone());
                    e
                }
            };
            frac.push(entry.0);
            if let Some(k) = entry.1 {
                inverse.push(k);
            }
            d.push(d_h(h)?);
        }
        Ok(Self { grid: *grid, hurst: hurst.clone(), frac, inverse, d })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> &HurstVector {
        &self.hurst
    }

    fn exponent(&self, i: usize) -> f64 {
        0.5 - self.hurst.get(i)
    }

    /// `scale · d_i⁻¹ t^{−a} I^a[s^a g](t)` on the grid; the identity times
    /// `scale` when `H_i = 1/2`. The value at `t₀` is 0 for `H_i < 1/2`.
    fn q_transform(&self, i: usize, g: &[f64], scale: f64) -> Result<Vec<f64>> {
        match &self.frac[i] {
            None => Ok(g.iter().map(|v| scale * v).collect()),
            Some(plan) => {
                let a = plan.alpha();
                let inner = rl_integral_left_power(plan, g, a)?;
                let c = scale / self.d[i];
                Ok(inner
                    .iter()
                    .enumerate()
                    .map(|(k, v)| if k == 0 { 0.0 } else { c * self.grid.node(k).powf(-a) * v })
                    .collect())
            }
        }
    }

    /// `∫₀^T f dt` for a product of two `Q`-type fields of component `i`.
    fn time_integral(&self, i: usize, f: &[f64]) -> f64 {
        let h = self.grid.h_coarse();
        let a = self.exponent(i);
        if a == 0.0 {
            f.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
        } else {
            power_start_trapezoid(f, h, 2.0 * a)
        }
    }
}

/// `Y` with `Y_0 = 0` from the compensated sums
/// `ε⁻¹ [σ*A⁻¹(X_k) ΔX_k + ½ Σ_c ∂_c(σ*A⁻¹)(X_k) ΔX_k ΔX_k^c]`.
/// Returns `r` paths of `n_coarse + 1` node values.
pub fn build_y(traj: &Trajectory, model: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    if !(traj.epsilon > 0.0) {
        return Err(Error::Input("Y needs ε > 0".into()));
    }
    let n = traj.states.len() - 1;
    let mut y = vec![vec![0.0; n + 1]; model.r];
    let mut acc = DVector::zeros(model.r);
    for k in 0..n {
        let x = &traj.states[k];
        let dx = DVector::from_iterator(model.d, traj.states[k + 1].iter().zip(x).map(|(a, b)| a - b));
        let mut step = model.pullback(x)? * &dx;
        for (c, dp) in model.pullback_dx(x)?.iter().enumerate() {
            step += dp * &dx * (0.5 * dx[c]);
        }
        acc += step / traj.epsilon;
        for i in 0..model.r {
            y[i][k + 1] = acc[i];
        }
    }
    Ok(y)
}

/// `Z^i = k_{H_i}⁻¹ Y^i` componentwise.
pub fn build_z(y: &[Vec<f64>], plans: &TransformPlans) -> Result<Vec<Vec<f64>>> {
    if plans.inverse.len() != plans.hurst.len() {
        return Err(Error::Input("transform plans were built without inverse kernels".into()));
    }
    if y.len() != plans.hurst.len() {
        return Err(Error::Input(format!("{} Y components for {} Hurst indices", y.len(), plans.hurst.len())));
    }
    y.iter()
        .zip(&plans.inverse)
        .map(|(yi, kernel)| {
            let inc: Vec<f64> = yi.windows(2).map(|w| w[1] - w[0]).collect();
            kernel.apply(&inc)
        })
        .collect()
}

/// `Q` and its θ-derivatives on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QField {
    /// `values[i][k] = Q^i(t_k)`.
    pub values: Vec<Vec<f64>>,
    /// `dtheta[j][i][k] = ∂_{θ_j} Q^i(t_k)`; empty below order 1.
    pub dtheta: Vec<Vec<Vec<f64>>>,
    /// `dtheta2[j][l][i][k] = ∂_{θ_j}∂_{θ_l} Q^i(t_k)`; empty below order 2.
    pub dtheta2: Vec<Vec<Vec<Vec<f64>>>>,
}

fn component_series(pullbacks: &[DMatrix<f64>], drift: &[DVector<f64>], r: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(drift.len()); r];
    for (p, b) in pullbacks.iter().zip(drift) {
        let g = p * b;
        for i in 0..r {
            out[i].push(g[i]);
        }
    }
    out
}

fn transform_all(plans: &TransformPlans, g: &[Vec<f64>], scale: f64) -> Result<Vec<Vec<f64>>> {
    g.iter().enumerate().map(|(i, gi)| plans.q_transform(i, gi, scale)).collect()
}

fn pullbacks_along(model: &ModelSpec, states: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>> {
    states.iter().map(|x| model.pullback(x)).collect()
}

fn q_field_cached(
    model: &ModelSpec,
    states: &[Vec<f64>],
    pullbacks: &[DMatrix<f64>],
    theta: &[f64],
    scale: f64,
    plans: &TransformPlans,
    order: usize,
) -> Result<QField> {
    model.check_theta(theta)?;
    if states.len() != plans.grid.n_coarse + 1 {
        return Err(Error::Input("state path and transform plans use different grids".into()));
    }
    let r = model.r;
    let m = model.m;
    let drift: Vec<DVector<f64>> = states.iter().map(|x| (model.drift)(x, theta)).collect();
    let values = transform_all(plans, &component_series(pullbacks, &drift, r), scale)?;
    let mut dtheta = Vec::new();
    let mut dtheta2 = Vec::new();
    if order >= 1 {
        let d1: Vec<DMatrix<f64>> = states.iter().map(|x| model.drift_dtheta1(x, theta)).collect();
        for j in 0..m {
            let col: Vec<DVector<f64>> = d1.iter().map(|g| g.column(j).into_owned()).collect();
            dtheta.push(transform_all(plans, &component_series(pullbacks, &col, r), scale)?);
        }
    }
    if order >= 2 {
        let d2: Vec<Vec<DMatrix<f64>>> = states.iter().map(|x| model.drift_dtheta2(x, theta)).collect();
        dtheta2 = vec![vec![Vec::new(); m]; m];
        for j in 0..m {
            for l in j..m {
                let col: Vec<DVector<f64>> = d2.iter().map(|g| g[j].column(l).into_owned()).collect();
                let q = transform_all(plans, &component_series(pullbacks, &col, r), scale)?;
                if l != j {
                    dtheta2[l][j] = q.clone();
                }
                dtheta2[j][l] = q;
            }
        }
    }
    let field = QField { values, dtheta, dtheta2 };
    let finite = field.values.iter().flatten().all(|v| v.is_finite())
        && field.dtheta.iter().flatten().flatten().all(|v| v.is_finite())
        && field.dtheta2.iter().flatten().flatten().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::Evaluation(format!("non-finite Q at θ = {theta:?}")));
    }
    Ok(field)
}

/// `Q^ε_{H,θ}` along `states` (pass `ε = 1` and the ODE path for the
/// deterministic field), with derivatives up to `order ≤ 2`.
pub fn compute_q(
    model: &ModelSpec,
    states: &[Vec<f64>],
    theta: &[f64],
    epsilon: f64,
    plans: &TransformPlans,
    order: usize,
) -> Result<QField> {
    if !(epsilon > 0.0) {
        return Err(Error::Input(format!("ε = {epsilon} must be positive")));
    }
    let pullbacks = pullbacks_along(model, states)?;
    q_field_cached(model, states, &pullbacks, theta, 1.0 / epsilon, plans, order)
}

/// Value, gradient and Hessian of `𝕃`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Everything about one observed trajectory that does not depend on θ.
#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    pub model: ModelSpec,
    pub epsilon: f64,
    pub theta0: Option<Vec<f64>>,
    states: Vec<Vec<f64>>,
    pullbacks: Vec<DMatrix<f64>>,
    y: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    dz: Vec<Vec<f64>>,
    plans: TransformPlans,
}

impl LikelihoodContext {
    pub fn new(model: &ModelSpec, traj: &Trajectory, hurst: &HurstVector) -> Result<Self> {
        let plans = TransformPlans::new(hurst, &traj.grid)?;
        Self::with_plans(model, traj, &plans)
    }

    /// Reuses precomputed plans (they must match the trajectory grid).
    pub fn with_plans(model: &ModelSpec, traj: &Trajectory, plans: &TransformPlans) -> Result<Self> {
        if traj.grid.n_coarse != plans.grid.n_coarse || traj.grid.horizon != plans.grid.horizon {
            return Err(Error::Input("trajectory and transform plans use different grids".into()));
        }
        if plans.hurst.len() != model.r {
            return Err(Error::Input(format!(
                "{} Hurst indices for a model with {} driver components",
                plans.hurst.len(),
                model.r
            )));
        }
        if traj.states.len() != traj.grid.n_coarse + 1 {
            return Err(Error::Input("trajectory length does not match its grid".into()));
        }
        let pullbacks = pullbacks_along(model, &traj.states)?;
        let y = build_y(traj, model)?;
        let z = build_z(&y, plans)?;
        let dz = z.iter().map(|zi| zi.windows(2).map(|w| w[1] - w[0]).collect()).collect();
        Ok(Self {
            model: model.clone(),
            epsilon: traj.epsilon,
            theta0: None,
            states: traj.states.clone(),
            pullbacks,
            y,
            z,
            dz,
            plans: plans.clone(),
        })
    }

    /// Records the true parameter so estimates carry `u = ε⁻¹(θ̂ − θ₀)`.
    pub fn with_theta0(mut self, theta0: &[f64]) -> Self {
        self.theta0 = Some(theta0.to_vec());
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.plans.grid
    }

    pub fn plans(&self) -> &TransformPlans {
        &self.plans
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn y_paths(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn z_paths(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn q_field(&self, theta: &[f64], order: usize) -> Result<QField> {
        q_field_cached(&self.model, &self.states, &self.pullbacks, theta, 1.0 / self.epsilon, &self.plans, order)
    }

    /// `Σ_k f_k ΔZ^i_k` (left point).
    fn dz_sum(&self, i: usize, f: &[f64]) -> f64 {
        f.iter().zip(&self.dz[i]).map(|(a, b)| a * b).sum()
    }

    fn product_integral(&self, i: usize, f: &[f64], g: &[f64]) -> f64 {
        let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.plans.time_integral(i, &prod)
    }

    /// `𝕃` and, as requested by `order`, its gradient and Hessian.
    pub fn evaluate(&self, theta: &[f64], order: usize) -> Result<LikelihoodEval> {
        let q = self.q_field(theta, order)?;
        let r = self.model.r;
        let m = self.model.m;
        let mut value = 0.0;
        for i in 0..r {
            value += self.dz_sum(i, &q.values[i]) - 0.5 * self.product_integral(i, &q.values[i], &q.values[i]);
        }
        let grad = (order >= 1).then(|| {
            DVector::from_fn(m, |j, _| {
                (0..r)
                    .map(|i| {
                        let dq = &q.dtheta[j][i];
                        self.dz_sum(i, dq) - self.product_integral(i, &q.values[i], dq)
                    })
                    .sum()
            })
        });
        let hessian = (order >= 2).then(|| {
            let mut hm = DMatrix::zeros(m, m);
            for j in 0..m {
                for l in j..m {
                    let v: f64 = (0..r)
                        .map(|i| {
                            let d2 = &q.dtheta2[j][l][i];
                            self.dz_sum(i, d2)
                                - self.product_integral(i, &q.dtheta[j][i], &q.dtheta[l][i])
                                - self.product_integral(i, &q.values[i], d2)
                        })
                        .sum();
                    hm[(j, l)] = v;
                    hm[(l, j)] = v;
                }
            }
            hm
        });
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("𝕃 not finite at θ = {theta:?}")));
        }
        Ok(LikelihoodEval { value, grad, hessian })
    }
}

pub fn log_likelihood(ctx: &LikelihoodContext, theta: &[f64]) -> Result<f64> {
    Ok(ctx.evaluate(theta, 0)?.value)
}

pub fn grad_log_likelihood(ctx: &LikelihoodContext, theta: &[f64]) -> Result<DVector<f64>> {
    Ok(ctx.evaluate(theta, 1)?.grad.expect("order 1 requested"))
}

pub fn hessian_log_likelihood(ctx: &LikelihoodContext, theta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(ctx.evaluate(theta, 2)?.hessian.expect("order 2 requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{lift, sample_fbm};
    use crate::model::{builtin, constant_drift, linear1d};
    use crate::rde::solve_rde;
    use crate::rng::StreamKey;
    use statrs::function::gamma::gamma;

    pub(crate) fn simulate(model: &ModelSpec, theta: &[f64], eps: f64, h: f64, n: usize, seed: u64) -> Trajectory {
        let hv = HurstVector::new(vec![h; model.r]).unwrap();
        let grid = TimeGrid::new(1.0, n, if model.r > 1 { 3 } else { 0 }).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid, StreamKey::new(seed, 0)).unwrap());
        solve_rde(model, theta, eps, &rp, &model.default_x0).unwrap()
    }

    fn context(model: &ModelSpec, theta: &[f64], eps: f64, n: usize, seed: u64) -> LikelihoodContext {
        let traj = simulate(model, theta, eps, 0.4, n, seed);
        LikelihoodContext::new(model, &traj, &HurstVector::new(vec![0.4; model.r]).unwrap()).unwrap()
    }

    #[test]
    fn constant_drift_q_closed_form() {
        let model = constant_drift();
        let grid = TimeGrid::new(1.0, 1024, 0).unwrap();
        let plans = TransformPlans::new(&HurstVector::new(vec![0.4]).unwrap(), &grid).unwrap();
        let states = vec![vec![0.0]; 1025];
        let q = compute_q(&model, &states, &[1.0], 1.0, &plans, 0).unwrap();
        let exact = gamma(1.1) / gamma(1.2) / d_h(0.4).unwrap();
        assert!((exact - 1.100_907_104_204_658_54).abs() < 1e-12);
        assert!((q.values[0][1024] / exact - 1.0).abs() <= 1e-4, "{}", q.values[0][1024]);
        assert_eq!(q.values[0][0], 0.0);
        // t^{1/2 − H} profile
        let mid = q.values[0][256] / q.values[0][1024];
        assert!((mid - 0.25f64.powf(0.1)).abs() <= 1e-4);
    }

    #[test]
    fn null_drift_gives_null_q_and_likelihood() {
        let model = builtin("pure_noise").unwrap();
        let ctx = context(&model, &[1.0], 0.1, 64, 1);
        let q = ctx.q_field(&[1.0], 2).unwrap();
        assert!(q.values[0].iter().all(|&v| v == 0.0));
        assert_eq!(log_likelihood(&ctx, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn sigma_one_gives_scaled_increments() {
        let ctx = context(&linear1d(), &[1.0], 0.1, 128, 2);
        let y = &ctx.y_paths()[0];
        let x = ctx.states();
        for k in 0..=128 {
            assert!((y[k] - (x[k][0] - x[0][0]) / 0.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn q_is_linear_in_a_linear_drift() {
        let ctx = context(&linear1d(), &[1.0], 0.1, 256, 3);
        let q1 = ctx.q_field(&[1.0], 0).unwrap();
        let q2 = ctx.q_field(&[2.0], 0).unwrap();
        assert!(q1.values[0].iter().zip(&q2.values[0]).all(|(a, b)| 2.0 * a == *b));
    }

    #[test]
    fn constant_drift_likelihood_is_quadratic() {
        let ctx = context(&constant_drift(), &[1.0], 0.2, 256, 4);
        let t = 1.7;
        let l = |th: f64| log_likelihood(&ctx, &[th]).unwrap();
        let q = ctx.q_field(&[1.0], 0).unwrap();
        let s2 = ctx.product_integral(0, &q.values[0], &q.values[0]);
        let lhs = l(2.0 * t) - 2.0 * l(t) + l(0.0);
        assert!((lhs + t * t * s2).abs() <= 1e-10 * (1.0 + s2), "{lhs} vs {}", -t * t * s2);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let model = builtin("cross2d").unwrap();
        let ctx = context(&model, &[1.0, 2.0], 0.2, 128, 5);
        for theta in [[1.0, 2.0], [0.4, 3.3], [4.2, 0.7]] {
            let ev = ctx.evaluate(&theta, 2).unwrap();
            let g = ev.grad.unwrap();
            let hm = ev.hessian.unwrap();
            for j in 0..2 {
                let step = 1e-5;
                let mut up = theta;
                let mut dn = theta;
                up[j] += step;
                dn[j] -= step;
                let fd = (log_likelihood(&ctx, &up).unwrap() - log_likelihood(&ctx, &dn).unwrap()) / (2.0 * step);
                assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1.0), "grad {j}: {fd} vs {}", g[j]);
                let gu = grad_log_likelihood(&ctx, &up).unwrap();
                let gd = grad_log_likelihood(&ctx, &dn).unwrap();
                for l in 0..2 {
                    let fd = (gu[l] - gd[l]) / (2.0 * step);
                    assert!((fd - hm[(l, j)]).abs() <= 1e-3 * hm[(l, j)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zero_y_gives_zero_z() {
        let grid = TimeGrid::new(1.0, 32, 0).unwrap();
        let plans = TransformPlans::new(&HurstVector::new(vec![0.4, 0.45]).unwrap(), &grid).unwrap();
        let z = build_z(&[vec![0.0; 33], vec![0.0; 33]], &plans).unwrap();
        assert!(z.iter().flatten().all(|&v| v == 0.0));
        assert!(build_z(&[vec![0.0; 33]], &plans).is_err());
    }

    #[test]
    fn shared_hurst_values_share_plans() {
        let grid = TimeGrid::new(1.0, 16, 0).unwrap();
        let plans = TransformPlans::new(&HurstVector::new(vec![0.4, 0.4, 0.45]).unwrap(), &grid).unwrap();
        assert!(Arc::ptr_eq(&plans.inverse[0], &plans.inverse[1]));
        assert!(!Arc::ptr_eq(&plans.inverse[0], &plans.inverse[2]));
    }
}
