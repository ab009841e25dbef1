//! Deterministic limit objects along the noiseless path: the asymptotic
//! covariance `Γ_H(θ₀)` and the contrast field `𝕐_H(θ)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::ser::{Serialize, SerializeStruct, Serializer};

use super::{component_series, pullbacks_along, transform_all, LikelihoodContext, TransformPlans};
use crate::error::{Error, Result};
use crate::fbm::{HurstVector, TimeGrid};
use crate::model::{ModelSpec, ParamBox};
use crate::rde::{solve_ode, OdePath};

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix {
    pub matrix: DMatrix<f64>,
    pub hurst: Vec<f64>,
    pub theta0: Vec<f64>,
    pub min_eigenvalue: f64,
    /// Set when `Γ` is not positive definite.
    pub warning: Option<String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl GammaMatrix {
    pub fn is_positive_definite(&self) -> bool {
        self.warning.is_none()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        rows(&self.matrix)
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        if !self.is_positive_definite() {
            return Err(Error::Standardization(format!(
                "Γ is singular (smallest eigenvalue {:e})",
                self.min_eigenvalue
            )));
        }
        self.matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Standardization("Γ is not invertible".into()))
    }
}

impl Serialize for GammaMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("GammaMatrix", 6)?;
        st.serialize_field("gamma", &self.rows())?;
        st.serialize_field("gamma_inv", &self.inverse().ok().map(|m| rows(&m)))?;
        st.serialize_field("hurst", &self.hurst)?;
        st.serialize_field("theta0", &self.theta0)?;
        st.serialize_field("min_eigenvalue", &self.min_eigenvalue)?;
        st.serialize_field("warning", &self.warning)?;
        st.end()
    }
}

/// `Γ^{jk} = Σ_i ∫₀^T ∂_{θ_j}Q^i ∂_{θ_k}Q^i dt` for the deterministic field
/// (`ε = 1`) along the RK4 path started at `x0`; equal to the
/// `γ_i t^{2H_i−1}(∫ s^{1/2−H_i} (t−s)^{−1/2−H_i} …)²` form of the definition.
pub fn gamma_matrix(
    model: &ModelSpec,
    theta0: &[f64],
    x0: &[f64],
    hurst: &HurstVector,
    grid: &TimeGrid,
) -> Result<GammaMatrix> {
    model.check_theta(theta0)?;
    if hurst.len() != model.r {
        return Err(Error::Input(format!("{} Hurst indices for r = {}", hurst.len(), model.r)));
    }
    let ode = solve_ode(model, theta0, x0, grid)?;
    let plans = TransformPlans::fractional_only(hurst, grid)?;
    let q = super::compute_q(model, &ode.states, theta0, 1.0, &plans, 1)?;
    let m = model.m;
    let mut g = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            let v: f64 = (0..model.r)
                .map(|i| {
                    let prod: Vec<f64> = q.dtheta[j][i].iter().zip(&q.dtheta[k][i]).map(|(a, b)| a * b).collect();
                    plans.time_integral(i, &prod)
                })
                .sum();
            g[(j, k)] = v;
        }
    }
    let matrix = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
    let min = eig.min();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let warning = (min <= RANK_TOL * max || max == 0.0).then(|| {
        let msg = format!("Γ_H(θ₀) is not positive definite (smallest eigenvalue {min:e}); the identifiability assumption fails");
        log::warn!("{msg}");
        msg
    });
    Ok(GammaMatrix { matrix, hurst: hurst.values().to_vec(), theta0: theta0.to_vec(), min_eigenvalue: min, warning })
}

/// `𝕐_H(θ) = −½ Σ_i ∫₀^T (Q^i_θ − Q^i_{θ₀})² dt` along the noiseless path.
pub fn y_limit_field(
    model: &ModelSpec,
    theta: &[f64],
    theta0: &[f64],
    hurst: &HurstVector,
    ode: &OdePath,
) -> Result<f64> {
    let plans = TransformPlans::fractional_only(hurst, &ode.grid)?;
    let pullbacks = pullbacks_along(model, &ode.states)?;
    y_limit_cached(model, theta, theta0, &plans, ode, &pullbacks)
}

fn y_limit_cached(
    model: &ModelSpec,
    theta: &[f64],
    theta0: &[f64],
    plans: &TransformPlans,
    ode: &OdePath,
    pullbacks: &[DMatrix<f64>],
) -> Result<f64> {
    model.check_theta(theta)?;
    model.check_theta(theta0)?;
    let diff: Vec<DVector<f64>> =
        ode.states.iter().map(|x| (model.drift)(x, theta) - (model.drift)(x, theta0)).collect();
    let q = transform_all(plans, &component_series(pullbacks, &diff, model.r), 1.0)?;
    let total: f64 = q
        .iter()
        .enumerate()
        .map(|(i, qi)| plans.time_integral(i, &qi.iter().map(|v| v * v).collect::<Vec<_>>()))
        .sum();
    Ok(-0.5 * total)
}

/// `ε²(𝕃(θ) − 𝕃(θ₀))`, the finite-noise version of [`y_limit_field`].
pub fn y_eps_field(ctx: &LikelihoodContext, theta: &[f64], theta0: &[f64]) -> Result<f64> {
    let e2 = ctx.epsilon * ctx.epsilon;
    Ok(e2 * (ctx.evaluate(theta, 0)?.value - ctx.evaluate(theta0, 0)?.value))
}

/// Tensor grid with `per_axis` points per coordinate, endpoints included.
pub fn theta_grid(domain: &ParamBox, per_axis: usize) -> Vec<Vec<f64>> {
    let m = domain.dim();
    let per_axis = per_axis.max(2);
    let mut out = vec![Vec::new()];
    for j in 0..m {
        let axis: Vec<f64> =
            (0..per_axis).map(|s| domain.lower[j] + domain.width(j) * s as f64 / (per_axis - 1) as f64).collect();
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IdentifiabilityScan {
    pub thetas: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// `inf_{θ ≠ θ₀} −𝕐_H(θ) / |θ − θ₀|²` over the scanned points.
    pub xi_hat: f64,
    pub all_negative: bool,
}

pub fn identifiability_scan(
    model: &ModelSpec,
    theta0: &[f64],
    hurst: &HurstVector,
    ode: &OdePath,
    thetas: &[Vec<f64>],
) -> Result<IdentifiabilityScan> {
    let plans = TransformPlans::fractional_only(hurst, &ode.grid)?;
    let pullbacks = pullbacks_along(model, &ode.states)?;
    let mut values = Vec::with_capacity(thetas.len());
    let mut xi_hat = f64::INFINITY;
    let mut all_negative = true;
    for theta in thetas {
        let v = y_limit_cached(model, theta, theta0, &plans, ode, &pullbacks)?;
        let dist2: f64 = theta.iter().zip(theta0).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 > 0.0 {
            xi_hat = xi_hat.min(-v / dist2);
            all_negative &= v < 0.0;
        }
        values.push(v);
    }
    Ok(IdentifiabilityScan { thetas: thetas.to_vec(), values, xi_hat, all_negative })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, linear1d};

    fn hv() -> HurstVector {
        HurstVector::new(vec![0.4]).unwrap()
    }

    #[test]
    fn linear_model_gamma_matches_reference_and_refines() {
        let model = linear1d();
        let coarse = gamma_matrix(&model, &[1.0], &[1.0], &hv(), &TimeGrid::new(1.0, 512, 0).unwrap()).unwrap();
        let fine = gamma_matrix(&model, &[1.0], &[1.0], &hv(), &TimeGrid::new(1.0, 2048, 0).unwrap()).unwrap();
        let (a, b) = (coarse.matrix[(0, 0)], fine.matrix[(0, 0)]);
        assert!(a > 0.0 && coarse.is_positive_definite());
        assert!((a / b - 1.0).abs() <= 1e-3, "{a} vs {b}");
        assert!((b / 0.427_272_719_684_809 - 1.0).abs() <= 1e-4, "{b}");
    }

    #[test]
    fn theta_free_drift_has_zero_gamma() {
        let g = gamma_matrix(&builtin("pure_noise").unwrap(), &[1.0], &[0.0], &hv(), &TimeGrid::new(1.0, 64, 0).unwrap())
            .unwrap();
        assert_eq!(g.matrix[(0, 0)], 0.0);
        assert!(g.warning.is_some());
        assert!(g.inverse().is_err());
    }

    #[test]
    fn collinear_scores_are_flagged() {
        let g = gamma_matrix(
            &builtin("collinear2").unwrap(),
            &[1.0, 1.0],
            &[1.0],
            &hv(),
            &TimeGrid::new(1.0, 128, 0).unwrap(),
        )
        .unwrap();
        assert_eq!(g.matrix[(0, 0)], g.matrix[(0, 1)]);
        assert_eq!(g.matrix[(1, 1)], g.matrix[(1, 0)]);
        assert!(g.warning.is_some());
    }

    #[test]
    fn limit_field_is_quadratic_for_linear_drift() {
        let model = linear1d();
        let grid = TimeGrid::new(1.0, 256, 0).unwrap();
        let ode = solve_ode(&model, &[1.0], &[1.0], &grid).unwrap();
        assert_eq!(y_limit_field(&model, &[1.0], &[1.0], &hv(), &ode).unwrap(), 0.0);
        let base = y_limit_field(&model, &[2.0], &[1.0], &hv(), &ode).unwrap();
        for t in [0.1, 0.5, 1.7, 3.0, 5.0] {
            let v = y_limit_field(&model, &[t], &[1.0], &hv(), &ode).unwrap();
            let expected = base * (t - 1.0) * (t - 1.0);
            assert!((v - expected).abs() <= 1e-10 * expected.abs().max(1e-300), "θ {t}");
        }
        // −𝕐_H/|θ−θ₀|² = Γ/2 for drift linear in θ
        let g = gamma_matrix(&model, &[1.0], &[1.0], &hv(), &grid).unwrap();
        assert!((-base / (0.5 * g.matrix[(0, 0)]) - 1.0).abs() <= 1e-10);
        let scan = identifiability_scan(&model, &[1.0], &hv(), &ode, &theta_grid(&model.theta_domain, 25)).unwrap();
        assert!(scan.all_negative && scan.xi_hat > 0.0);
    }

    #[test]
    fn grid_of_parameters() {
        let dom = ParamBox::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let g = theta_grid(&dom, 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 1.0]);
        assert_eq!(g[8], vec![1.0, 2.0]);
    }
}
