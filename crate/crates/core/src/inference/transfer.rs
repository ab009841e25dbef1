//! Consistency check `ε ∫ σ(X) dY = X_T − X_0` with `Y = ε⁻¹∫σ*A⁻¹b dt + B`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fbm::RoughPath;
use crate::model::ModelSpec;
use crate::rde::Trajectory;

/// Residual `|ε ∫₀^T σ(X) dY − (X_T − X_0)|` of the transfer identity.
///
/// `Y` is assembled from the known driver as `D + B`, with `D = ε⁻¹∫σ*A⁻¹ b dt`
/// by the trapezoid rule. The rough integral is the compensated sum
/// `Σ_k ε σ(X_k) ΔY_k + ε² Σ_{i,j} G_j(X_k)[·, i] 𝕐^{ji}_k`, where the second
/// level of `Y` is `𝔹 + ∫D⊗dB + ∫B⊗dD + ∫D⊗dD`, the three Young terms taken as
/// left-point sums over the fine subgrid with `D` linear inside a coarse step.
pub fn verify_transfer_identity(traj: &Trajectory, model: &ModelSpec, rp: &RoughPath) -> Result<f64> {
    let n = rp.n_steps();
    if traj.states.len() != n + 1 || traj.grid.horizon != rp.grid.horizon {
        return Err(Error::Input("trajectory and driver live on different grids".into()));
    }
    if rp.dim() != model.r {
        return Err(Error::Input(format!("driver has {} components, model needs {}", rp.dim(), model.r)));
    }
    let eps = traj.epsilon;
    if !(eps > 0.0) {
        return Err(Error::Input("transfer identity needs ε > 0".into()));
    }
    let r = model.r;
    let dt = rp.grid.h_coarse();
    let rate: Vec<DVector<f64>> = traj
        .states
        .iter()
        .map(|x| Ok(model.pullback(x)? * (model.drift)(x, &traj.theta_used) / eps))
        .collect::<Result<_>>()?;
    let per = rp.grid.fine_per_coarse();
    let use_fine = per > 1 && rp.fine_increments.len() == r;

    let mut total = DVector::zeros(model.d);
    for k in 0..n {
        let x = &traj.states[k];
        let dd: DVector<f64> = (&rate[k] + &rate[k + 1]) * (0.5 * dt);
        let db = DVector::from_column_slice(&rp.increments[k]);
        let dy = &dd + &db;
        let mut area: DMatrix<f64> = rp.areas[k].clone();
        if use_fine {
            let fine_dd = &dd / per as f64;
            let mut b_loc = DVector::zeros(r);
            for m in 0..per {
                let d_loc = &dd * (m as f64 / per as f64);
                let fine_db = DVector::from_fn(r, |i, _| rp.fine_increments[i][k * per + m]);
                for a in 0..r {
                    for b in 0..r {
                        area[(a, b)] += d_loc[a] * fine_db[b] + b_loc[a] * fine_dd[b] + d_loc[a] * fine_dd[b];
                    }
                }
                b_loc += fine_db;
            }
        }
        total += (model.diffusion)(x) * &dy * eps;
        for (j, gj) in model.sigma_gubinelli(x).iter().enumerate() {
            for i in 0..r {
                total.axpy(eps * eps * area[(j, i)], &gj.column(i), 1.0);
            }
        }
    }
    let moved = DVector::from_iterator(model.d, traj.states[n].iter().zip(&traj.states[0]).map(|(a, b)| a - b));
    Ok((total - moved).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{lift, sample_fbm, FbmPath, HurstVector, TimeGrid};
    use crate::model::{builtin, linear1d};
    use crate::rde::solve_rde;
    use crate::rng::StreamKey;
    use std::sync::Arc;

    #[test]
    fn constant_sigma_without_drift_is_exact() {
        let mut model = builtin("pure_noise").unwrap();
        model.diffusion = Arc::new(|_| DMatrix::from_element(1, 1, 1.7));
        let grid = TimeGrid::new(1.0, 256, 2).unwrap();
        let rp = lift(&sample_fbm(&HurstVector::new(vec![0.4]).unwrap(), &grid, StreamKey::new(3, 0)).unwrap());
        let traj = solve_rde(&model, &[1.0], 0.1, &rp, &[0.0]).unwrap();
        assert!(verify_transfer_identity(&traj, &model, &rp).unwrap() <= 1e-10);
    }

    #[test]
    fn residual_shrinks_on_a_shared_driver() {
        let model = linear1d();
        let hv = HurstVector::new(vec![0.4]).unwrap();
        let fine = sample_fbm(&hv, &TimeGrid::new(1.0, 4096, 0).unwrap(), StreamKey::new(11, 0)).unwrap();
        let residual = |n: usize, level: u32| {
            let path = FbmPath::from_values(TimeGrid::new(1.0, n, level).unwrap(), fine.values.clone()).unwrap();
            let rp = lift(&path);
            let traj = solve_rde(&model, &[1.0], 0.1, &rp, &[1.0]).unwrap();
            verify_transfer_identity(&traj, &model, &rp).unwrap()
        };
        let (r1, r2, r4) = (residual(1024, 2), residual(2048, 1), residual(4096, 0));
        assert!(r2 <= 0.02);
        assert!(r4 < r2 && r2 < r1, "{r1} {r2} {r4}");
    }

    #[test]
    fn state_dependent_noise_in_two_dimensions() {
        let model = builtin("cross2d").unwrap();
        let hv = HurstVector::new(vec![0.4, 0.45]).unwrap();
        let grid = TimeGrid::new(1.0, 512, 4).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid, StreamKey::new(5, 0)).unwrap());
        let traj = solve_rde(&model, &[1.0, 2.0], 0.2, &rp, &[1.0, 1.0]).unwrap();
        assert!(verify_transfer_identity(&traj, &model, &rp).unwrap() <= 0.02);
    }
}
