//! One-step Davie scheme for the rough SDE and RK4 for its noiseless limit.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{RoughPath, TimeGrid};
use crate::model::ModelSpec;
use crate::roughpath::{controlled_compose, ControlledPath, StatePath};

/// States are declared divergent beyond this norm.
pub const BLOWUP_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `X_{t_k}` at coarse nodes.
    pub states: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub theta_used: Vec<f64>,
    pub seed: Option<u64>,
    pub replicate: Option<u64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.states[0]
    }

    /// `X` with Gubinelli derivative `ε σ(X)`.
    pub fn state_path(&self, model: &ModelSpec) -> StatePath {
        StatePath {
            values: self.states.iter().map(|x| DVector::from_column_slice(x)).collect(),
            derivative: self.states.iter().map(|x| (model.diffusion)(x) * self.epsilon).collect(),
        }
    }

    /// `σ(X)` as a path controlled by the driver, derivative `ε ∇σ(X) σ(X)`.
    pub fn sigma_controlled(&self, model: &ModelSpec) -> ControlledPath {
        controlled_compose(|x| (model.diffusion)(x), |x| (model.diffusion_dx)(x), &self.state_path(model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdePath {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub theta0: Vec<f64>,
}

fn guard(x: &DVector<f64>, step: usize) -> Result<()> {
    let n = x.norm();
    if !n.is_finite() || n > BLOWUP_GUARD {
        Err(Error::Divergence { step, norm: n })
    } else {
        Ok(())
    }
}

fn check_start(model: &ModelSpec, theta: &[f64], x0: &[f64]) -> Result<()> {
    model.check_theta(theta)?;
    if x0.len() != model.d || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("x0 = {x0:?} invalid for model `{}`", model.name)));
    }
    Ok(())
}

/// Solves `X = x₀ + ∫ b(X, θ) dt + ε ∫ σ(X) dB` on the coarse grid of `rp`:
///
/// `X_{k+1} = X_k + b(X_k, θ) Δt + ε σ(X_k) B_{k,k+1} + ε² Σ_{i,j} G_j(X_k)[·, i] 𝔹^{ji}_{k,k+1}`
///
/// with `G_j = Σ_c ∂_c σ_{·,·} σ_{c j}` (see [`ModelSpec::sigma_gubinelli`]).
/// `ε = 0` is accepted and gives the left-point drift flow.
pub fn solve_rde(model: &ModelSpec, theta: &[f64], epsilon: f64, rp: &RoughPath, x0: &[f64]) -> Result<Trajectory> {
    check_start(model, theta, x0)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Input(format!("epsilon = {epsilon} outside (0, 1]")));
    }
    if rp.dim() != model.r {
        return Err(Error::Input(format!("driver has {} components, model needs {}", rp.dim(), model.r)));
    }
    let dt = rp.grid.h_coarse();
    let eps2 = epsilon * epsilon;
    let mut x = DVector::from_column_slice(x0);
    let mut states = Vec::with_capacity(rp.n_steps() + 1);
    states.push(x0.to_vec());
    for k in 0..rp.n_steps() {
        let xs = x.as_slice();
        let mut next = &x + (model.drift)(xs, theta) * dt;
        if epsilon != 0.0 {
            let sigma = (model.diffusion)(xs);
            next += &sigma * DVector::from_column_slice(&rp.increments[k]) * epsilon;
            let area = &rp.areas[k];
            for (j, gj) in model.sigma_gubinelli(xs).iter().enumerate() {
                for i in 0..model.r {
                    let a = area[(j, i)];
                    if a != 0.0 {
                        next.axpy(eps2 * a, &gj.column(i), 1.0);
                    }
                }
            }
        }
        guard(&next, k + 1)?;
        x = next;
        states.push(x.iter().copied().collect());
    }
    Ok(Trajectory {
        grid: rp.grid,
        states,
        epsilon,
        theta_used: theta.to_vec(),
        seed: None,
        replicate: None,
    })
}

/// Classical RK4 for `dx/dt = b(x, θ₀)` with the coarse step.
pub fn solve_ode(model: &ModelSpec, theta0: &[f64], x0: &[f64], grid: &TimeGrid) -> Result<OdePath> {
    check_start(model, theta0, x0)?;
    let h = grid.h_coarse();
    let f = |x: &DVector<f64>| (model.drift)(x.as_slice(), theta0);
    let mut x = DVector::from_column_slice(x0);
    let mut states = Vec::with_capacity(grid.n_coarse + 1);
    states.push(x0.to_vec());
    for k in 0..grid.n_coarse {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (0.5 * h)));
        let k3 = f(&(&x + &k2 * (0.5 * h)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        guard(&x, k + 1)?;
        states.push(x.iter().copied().collect());
    }
    Ok(OdePath { grid: *grid, states, theta0: theta0.to_vec() })
}

/// `max_k |X^ε_{t_k} − x_{t_k}|`.
pub fn sup_distance(xeps: &Trajectory, x: &OdePath) -> Result<f64> {
    if xeps.states.len() != x.states.len() || xeps.grid.horizon != x.grid.horizon {
        return Err(Error::Input("trajectory and ODE path live on different grids".into()));
    }
    Ok(xeps
        .states
        .iter()
        .zip(&x.states)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{lift, sample_fbm, HurstVector};
    use crate::model::{builtin, geometric, linear1d};
    use crate::rng::StreamKey;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn driver(h: Vec<f64>, n: usize, level: u32, seed: u64) -> RoughPath {
        let hv = HurstVector::new(h).unwrap();
        let grid = TimeGrid::new(1.0, n, level).unwrap();
        lift(&sample_fbm(&hv, &grid, StreamKey::new(seed, 0)).unwrap())
    }

    #[test]
    fn additive_noise_is_exact() {
        let mut model = builtin("pure_noise").unwrap();
        model.diffusion = Arc::new(|_| DMatrix::from_element(1, 1, 2.5));
        let rp = driver(vec![0.4], 128, 0, 1);
        let traj = solve_rde(&model, &[1.0], 0.3, &rp, &[0.7]).unwrap();
        let path = rp.coarse_path();
        for (x, b) in traj.states.iter().zip(&path) {
            assert!((x[0] - (0.7 + 0.3 * 2.5 * b[0])).abs() < 1e-13);
        }
    }

    #[test]
    fn geometric_closed_form() {
        let rp = driver(vec![0.4], 4096, 0, 2);
        let traj = solve_rde(&geometric(), &[1.0], 0.1, &rp, &[1.0]).unwrap();
        let path = rp.coarse_path();
        let worst = traj
            .states
            .iter()
            .zip(&path)
            .map(|(x, b)| {
                let exact = (0.1 * b[0]).exp();
                ((x[0] - exact) / exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "max relative error {worst}");
    }

    #[test]
    fn zero_noise_matches_the_ode() {
        let model = linear1d();
        let rp = driver(vec![0.4], 256, 0, 3);
        let traj = solve_rde(&model, &[1.0], 0.0, &rp, &[1.0]).unwrap();
        let ode = solve_ode(&model, &[1.0], &[1.0], &rp.grid).unwrap();
        let dt = rp.grid.h_coarse();
        let gap = sup_distance(&traj, &ode).unwrap();
        // Lipschitz constant 1, T = 1
        assert!(gap > 0.0 && gap <= 5.0 * dt, "gap {gap}");
    }

    #[test]
    fn ode_examples() {
        let model = linear1d();
        let grid = TimeGrid::new(1.0, 1024, 0).unwrap();
        let ode = solve_ode(&model, &[1.0], &[1.0], &grid).unwrap();
        assert!((ode.states[1024][0] - (-1.0f64).exp()).abs() <= 1e-8);
        let flat = solve_ode(&builtin("pure_noise").unwrap(), &[1.0], &[0.4], &grid).unwrap();
        assert!(flat.states.iter().all(|x| x[0] == 0.4));
    }

    #[test]
    fn cross2d_ode_matches_richardson_reference() {
        let model = builtin("cross2d").unwrap();
        let coarse = solve_ode(&model, &[1.0, 2.0], &[1.0, 1.0], &TimeGrid::new(1.0, 64, 0).unwrap()).unwrap();
        let fine = solve_ode(&model, &[1.0, 2.0], &[1.0, 1.0], &TimeGrid::new(1.0, 128, 0).unwrap()).unwrap();
        for k in 0..=64 {
            for c in 0..2 {
                let reference = fine.states[2 * k][c] + (fine.states[2 * k][c] - coarse.states[k][c]) / 15.0;
                assert!((coarse.states[k][c] - reference).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn identical_paths_have_zero_distance() {
        let model = linear1d();
        let rp = driver(vec![0.4], 32, 0, 4);
        let traj = solve_rde(&model, &[1.0], 0.0, &rp, &[1.0]).unwrap();
        let as_ode = OdePath { grid: traj.grid, states: traj.states.clone(), theta0: vec![1.0] };
        assert_eq!(sup_distance(&traj, &as_ode).unwrap(), 0.0);
        let other = solve_ode(&model, &[1.0], &[1.0], &TimeGrid::new(1.0, 16, 0).unwrap()).unwrap();
        assert!(sup_distance(&traj, &other).is_err());
    }

    #[test]
    fn divergence_carries_the_step() {
        let mut model = linear1d();
        model.drift = Arc::new(|x, _| DVector::from_element(1, 1e6 * x[0] * x[0]));
        let rp = driver(vec![0.4], 64, 0, 5);
        match solve_rde(&model, &[1.0], 0.1, &rp, &[1.0]) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1 && step <= 64),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_inputs() {
        let rp = driver(vec![0.4], 16, 0, 6);
        assert!(matches!(solve_rde(&linear1d(), &[7.0], 0.1, &rp, &[1.0]), Err(Error::Domain(_))));
        assert!(solve_rde(&linear1d(), &[1.0], 1.5, &rp, &[1.0]).is_err());
        let rp2 = driver(vec![0.4, 0.4], 16, 1, 6);
        assert!(solve_rde(&linear1d(), &[1.0], 0.1, &rp2, &[1.0]).is_err());
    }

    #[test]
    fn bit_identical_reruns() {
        let model = builtin("cross2d").unwrap();
        let a = solve_rde(&model, &[1.0, 2.0], 0.5, &driver(vec![0.4, 0.45], 64, 3, 9), &[1.0, 1.0]).unwrap();
        let b = solve_rde(&model, &[1.0, 2.0], 0.5, &driver(vec![0.4, 0.45], 64, 3, 9), &[1.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }
}
