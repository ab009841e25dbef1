//! Parametric SDE models `dX = b(X, θ) dt + ε σ(X) dB` and assumption probes.
//!
//! A model is a bundle of callbacks: the drift and its derivatives in `x` and
//! `θ`, the diffusion and its first two `x`-derivatives. Built-in models are
//! looked up by name through [`builtin`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

pub type DriftFn = Arc<dyn Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync>;
pub type DriftDxFn = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;
/// `(order k, x, θ)` → `∇_θ^k b` flattened row-major as `d × m^k`.
pub type DriftDthetaFn = Arc<dyn Fn(usize, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// `x` → `[∂σ/∂x_c]_{c < d}`, each `d × r`.
pub type DiffusionDxFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;
/// `x` → `[[∂²σ/∂x_c∂x_e]]`, each `d × r`.
pub type DiffusionDxxFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<DMatrix<f64>>> + Send + Sync>;

/// Highest θ-derivative order a model must supply.
pub const MAX_THETA_ORDER: usize = 4;

/// Axis-aligned parameter box. The estimator works on its closure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Input("parameter box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(Error::Input(format!("degenerate parameter box {lower:?}..{upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains_closed(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn contains_open(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t > *l && *t < *u)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*l, *u);
        }
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    /// All `2^m` corners of the box.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|k| if mask >> k & 1 == 1 { self.upper[k] } else { self.lower[k] })
                    .collect()
            })
            .collect()
    }
}

/// Callback bundle describing one SDE model.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    /// State dimension.
    pub d: usize,
    /// Driver dimension.
    pub r: usize,
    /// Parameter dimension.
    pub m: usize,
    pub theta_domain: ParamBox,
    pub default_x0: Vec<f64>,
    /// `det A(x)` at or below this floor is treated as an ellipticity failure.
    pub ellipticity_floor: f64,
    pub drift: DriftFn,
    pub drift_dx: DriftDxFn,
    pub drift_dtheta: DriftDthetaFn,
    pub diffusion: DiffusionFn,
    pub diffusion_dx: DiffusionDxFn,
    pub diffusion_dxx: DiffusionDxxFn,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("r", &self.r)
            .field("m", &self.m)
            .field("theta_domain", &self.theta_domain)
            .finish_non_exhaustive()
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} has non-finite entries: {v:?}")))
    }
}

impl ModelSpec {
    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Input(format!(
                "state has dimension {}, model `{}` expects {}",
                x.len(),
                self.name,
                self.d
            )));
        }
        check_finite("state", x)
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.m {
            return Err(Error::Input(format!(
                "parameter has dimension {}, model `{}` expects {}",
                theta.len(),
                self.name,
                self.m
            )));
        }
        check_finite("parameter", theta)?;
        if !self.theta_domain.contains_closed(theta) {
            return Err(Error::Domain(format!(
                "θ = {theta:?} outside [{:?}, {:?}]",
                self.theta_domain.lower, self.theta_domain.upper
            )));
        }
        Ok(())
    }

    /// `b(x, θ)`.
    pub fn eval_drift(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_theta(theta)?;
        Ok((self.drift)(x, theta))
    }

    /// `σ(x)` as a `d × r` matrix.
    pub fn eval_diffusion(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        Ok((self.diffusion)(x))
    }

    /// `A(x) = σ(x) σ(x)*`.
    pub fn eval_a(&self, x: &[f64]) -> DMatrix<f64> {
        let s = (self.diffusion)(x);
        &s * s.transpose()
    }

    /// `A(x)⁻¹`, failing when `det A(x)` is at or below the ellipticity floor.
    pub fn eval_a_inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let a = self.eval_a(x);
        let det = a.determinant();
        if !(det > self.ellipticity_floor) {
            return Err(Error::Ellipticity { x: x.to_vec(), det });
        }
        a.try_inverse().ok_or(Error::Ellipticity { x: x.to_vec(), det })
    }

    /// `σ*(x) A⁻¹(x)`, an `r × d` matrix.
    pub fn pullback(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let a_inv = self.eval_a_inverse(x)?;
        Ok((self.diffusion)(x).transpose() * a_inv)
    }

    /// `∂/∂x_c [σ* A⁻¹](x)` for every `c`.
    pub fn pullback_dx(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let a_inv = self.eval_a_inverse(x)?;
        let s = (self.diffusion)(x);
        let st_ainv = s.transpose() * &a_inv;
        Ok((self.diffusion_dx)(x)
            .into_iter()
            .map(|ds| {
                let da = &ds * s.transpose() + &s * ds.transpose();
                ds.transpose() * &a_inv - &st_ainv * da * &a_inv
            })
            .collect())
    }

    /// `∇_θ b(x, θ)` as a `d × m` matrix.
    pub fn drift_dtheta1(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.m, &(self.drift_dtheta)(1, x, theta))
    }

    /// `∇_θ² b(x, θ)` as `m` matrices: entry `j` holds `∂_{θ_j} ∇_θ b` (`d × m`).
    pub fn drift_dtheta2(&self, x: &[f64], theta: &[f64]) -> Vec<DMatrix<f64>> {
        let flat = (self.drift_dtheta)(2, x, theta);
        let (d, m) = (self.d, self.m);
        (0..m)
            .map(|j| DMatrix::from_fn(d, m, |a, l| flat[a * m * m + j * m + l]))
            .collect()
    }

    /// Gubinelli coefficient of `σ(X)` per unit `ε`: entry `j` is the `d × r`
    /// matrix `G_j[a, i] = Σ_c ∂_c σ_{ai}(x) σ_{cj}(x)`, so the area term of a
    /// step is `Σ_{i,j} G_j[·, i] 𝔹^{ji}`.
    pub fn sigma_gubinelli(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let s = (self.diffusion)(x);
        let ds = (self.diffusion_dx)(x);
        (0..self.r)
            .map(|j| {
                let mut g = DMatrix::zeros(self.d, self.r);
                for (c, dsc) in ds.iter().enumerate() {
                    g += dsc * s[(c, j)];
                }
                g
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Built-in models

fn zeros_dtheta(d: usize, m: usize) -> DriftDthetaFn {
    Arc::new(move |k, _x, _t| vec![0.0; d * m.pow(k as u32)])
}

fn constant_diffusion(d: usize, r: usize, c: DMatrix<f64>) -> (DiffusionFn, DiffusionDxFn, DiffusionDxxFn) {
    (
        Arc::new(move |_x| c.clone()),
        Arc::new(move |_x| vec![DMatrix::zeros(d, r); d]),
        Arc::new(move |_x| vec![vec![DMatrix::zeros(d, r); d]; d]),
    )
}

/// `b = −θx`, `σ ≡ 1`, `Θ = (0.1, 5)`.
pub fn linear1d() -> ModelSpec {
    let (diffusion, diffusion_dx, diffusion_dxx) = constant_diffusion(1, 1, DMatrix::identity(1, 1));
    ModelSpec {
        name: "linear1d".into(),
        d: 1,
        r: 1,
        m: 1,
        theta_domain: ParamBox::new(vec![0.1], vec![5.0]).unwrap(),
        default_x0: vec![1.0],
        ellipticity_floor: 1e-10,
        drift: Arc::new(|x, t| DVector::from_element(1, -t[0] * x[0])),
        drift_dx: Arc::new(|_x, t| DMatrix::from_element(1, 1, -t[0])),
        drift_dtheta: Arc::new(|k, x, _t| vec![if k == 1 { -x[0] } else { 0.0 }]),
        diffusion,
        diffusion_dx,
        diffusion_dxx,
    }
}

/// `b = (−θ₁x₁ − 0.1x₂, −θ₂x₂)`, `σ = I + 0.3 diag(tanh x₁, tanh x₂)`.
pub fn cross2d() -> ModelSpec {
    let sech2 = |v: f64| 1.0 - v.tanh().powi(2);
    ModelSpec {
        name: "cross2d".into(),
        d: 2,
        r: 2,
        m: 2,
        theta_domain: ParamBox::new(vec![0.1, 0.1], vec![5.0, 5.0]).unwrap(),
        default_x0: vec![1.0, 1.0],
        ellipticity_floor: 1e-10,
        drift: Arc::new(|x, t| DVector::from_vec(vec![-t[0] * x[0] - 0.1 * x[1], -t[1] * x[1]])),
        drift_dx: Arc::new(|_x, t| DMatrix::from_row_slice(2, 2, &[-t[0], -0.1, 0.0, -t[1]])),
        drift_dtheta: Arc::new(|k, x, _t| match k {
            1 => vec![-x[0], 0.0, 0.0, -x[1]],
            _ => vec![0.0; 2 * 2usize.pow(k as u32)],
        }),
        diffusion: Arc::new(|x| {
            DMatrix::from_row_slice(2, 2, &[1.0 + 0.3 * x[0].tanh(), 0.0, 0.0, 1.0 + 0.3 * x[1].tanh()])
        }),
        diffusion_dx: Arc::new(move |x| {
            let mut d0 = DMatrix::zeros(2, 2);
            d0[(0, 0)] = 0.3 * sech2(x[0]);
            let mut d1 = DMatrix::zeros(2, 2);
            d1[(1, 1)] = 0.3 * sech2(x[1]);
            vec![d0, d1]
        }),
        diffusion_dxx: Arc::new(move |x| {
            // d/dv sech²(v) = −2 sech²(v) tanh(v)
            let mut d00 = DMatrix::zeros(2, 2);
            d00[(0, 0)] = -0.6 * sech2(x[0]) * x[0].tanh();
            let mut d11 = DMatrix::zeros(2, 2);
            d11[(1, 1)] = -0.6 * sech2(x[1]) * x[1].tanh();
            vec![vec![d00, DMatrix::zeros(2, 2)], vec![DMatrix::zeros(2, 2), d11]]
        }),
    }
}

/// `b = θ`, `σ ≡ 1`, `Θ = (−5, 5)`. Its likelihood is an exact quadratic in θ.
pub fn constant_drift() -> ModelSpec {
    let (diffusion, diffusion_dx, diffusion_dxx) = constant_diffusion(1, 1, DMatrix::identity(1, 1));
    ModelSpec {
        name: "constant_drift".into(),
        d: 1,
        r: 1,
        m: 1,
        theta_domain: ParamBox::new(vec![-5.0], vec![5.0]).unwrap(),
        default_x0: vec![0.0],
        ellipticity_floor: 1e-10,
        drift: Arc::new(|_x, t| DVector::from_element(1, t[0])),
        drift_dx: Arc::new(|_x, _t| DMatrix::zeros(1, 1)),
        drift_dtheta: Arc::new(|k, _x, _t| vec![if k == 1 { 1.0 } else { 0.0 }]),
        diffusion,
        diffusion_dx,
        diffusion_dxx,
    }
}

/// `b ≡ 0`, `σ(x) = x`. Solutions are `x₀ exp(εB)`; ellipticity fails at 0.
pub fn geometric() -> ModelSpec {
    ModelSpec {
        name: "geometric".into(),
        d: 1,
        r: 1,
        m: 1,
        theta_domain: ParamBox::new(vec![0.1], vec![5.0]).unwrap(),
        default_x0: vec![1.0],
        ellipticity_floor: 1e-10,
        drift: Arc::new(|_x, _t| DVector::zeros(1)),
        drift_dx: Arc::new(|_x, _t| DMatrix::zeros(1, 1)),
        drift_dtheta: zeros_dtheta(1, 1),
        diffusion: Arc::new(|x| DMatrix::from_element(1, 1, x[0])),
        diffusion_dx: Arc::new(|_x| vec![DMatrix::from_element(1, 1, 1.0)]),
        diffusion_dxx: Arc::new(|_x| vec![vec![DMatrix::zeros(1, 1)]]),
    }
}

/// `b ≡ 0`, `σ ≡ 1`: the observation is pure fractional noise.
pub fn pure_noise() -> ModelSpec {
    let (diffusion, diffusion_dx, diffusion_dxx) = constant_diffusion(1, 1, DMatrix::identity(1, 1));
    ModelSpec {
        name: "pure_noise".into(),
        d: 1,
        r: 1,
        m: 1,
        theta_domain: ParamBox::new(vec![0.1], vec![5.0]).unwrap(),
        default_x0: vec![0.0],
        ellipticity_floor: 1e-10,
        drift: Arc::new(|_x, _t| DVector::zeros(1)),
        drift_dx: Arc::new(|_x, _t| DMatrix::zeros(1, 1)),
        drift_dtheta: zeros_dtheta(1, 1),
        diffusion,
        diffusion_dx,
        diffusion_dxx,
    }
}

/// `b = −(θ₁ + θ₂)x / 2`: the two parameters are not separately identifiable.
pub fn collinear2() -> ModelSpec {
    let (diffusion, diffusion_dx, diffusion_dxx) = constant_diffusion(1, 1, DMatrix::identity(1, 1));
    ModelSpec {
        name: "collinear2".into(),
        d: 1,
        r: 1,
        m: 2,
        theta_domain: ParamBox::new(vec![0.1, 0.1], vec![5.0, 5.0]).unwrap(),
        default_x0: vec![1.0],
        ellipticity_floor: 1e-10,
        drift: Arc::new(|x, t| DVector::from_element(1, -0.5 * (t[0] + t[1]) * x[0])),
        drift_dx: Arc::new(|_x, t| DMatrix::from_element(1, 1, -0.5 * (t[0] + t[1]))),
        drift_dtheta: Arc::new(|k, x, _t| match k {
            1 => vec![-0.5 * x[0], -0.5 * x[0]],
            _ => vec![0.0; 2usize.pow(k as u32)],
        }),
        diffusion,
        diffusion_dx,
        diffusion_dxx,
    }
}

pub const BUILTIN_MODELS: &[&str] =
    &["linear1d", "cross2d", "constant_drift", "geometric", "pure_noise", "collinear2"];

/// Look up a built-in model by name.
pub fn builtin(name: &str) -> Result<ModelSpec> {
    match name {
        "linear1d" => Ok(linear1d()),
        "cross2d" => Ok(cross2d()),
        "constant_drift" => Ok(constant_drift()),
        "geometric" => Ok(geometric()),
        "pure_noise" => Ok(pure_noise()),
        "collinear2" => Ok(collinear2()),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Assumption probes

fn default_range() -> (f64, f64) {
    (-5.0, 5.0)
}
fn default_points() -> usize {
    200
}
fn default_pairs() -> usize {
    100
}
fn default_theta_points() -> usize {
    8
}
fn default_growth_power() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    0.3
}
fn default_lipschitz_max() -> f64 {
    1e3
}
fn default_growth_max() -> f64 {
    1e3
}
fn default_sigma_max() -> f64 {
    1e3
}
fn default_det_floor() -> f64 {
    1e-8
}

/// Probe design and pass thresholds for [`probe_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Every state coordinate is probed in this interval.
    #[serde(default = "default_range")]
    pub state_range: (f64, f64),
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    /// Random interior parameters, in addition to the box corners.
    #[serde(default = "default_theta_points")]
    pub n_theta: usize,
    /// Exponent `N` in the polynomial-growth bound.
    #[serde(default = "default_growth_power")]
    pub growth_power: f64,
    /// Exponent `λ` in the sublinear-growth bound on `σ*A⁻¹b`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lipschitz_max")]
    pub lipschitz_max: f64,
    #[serde(default = "default_growth_max")]
    pub growth_max: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_bound_max: f64,
    #[serde(default = "default_det_floor")]
    pub det_floor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEntry {
    /// θ-derivative order.
    pub theta_order: usize,
    /// x-derivative order.
    pub x_order: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    pub lipschitz_growth: bool,
    pub sigma_bounded: bool,
    pub elliptic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub lipschitz_estimate: f64,
    pub polygrowth_estimate: Vec<GrowthEntry>,
    pub ellipticity_min: f64,
    pub sigma_bound: f64,
    /// `sup |σ*A⁻¹b| / (1 + |x|^λ)`; `None` when ellipticity fails somewhere.
    pub sublinear_estimate: Option<f64>,
    pub pass: AssumptionFlags,
}

/// The probe design: states, state pairs and parameters, all reproducible from `seed`.
#[derive(Debug, Clone)]
pub struct ProbeDesign {
    pub states: Vec<Vec<f64>>,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub thetas: Vec<Vec<f64>>,
}

pub fn probe_design(model: &ModelSpec, cfg: &ProbeConfig, seed: u64) -> Result<ProbeDesign> {
    let (lo, hi) = cfg.state_range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Input(format!("degenerate probe range ({lo}, {hi})")));
    }
    let d = model.d;
    let mut rng = StreamKey::new(seed, 0).aux_rng(7);
    let state_box = ParamBox::new(vec![lo; d], vec![hi; d])?;
    let mut states = state_box.corners();
    states.push(vec![0.5 * (lo + hi); d]);
    if lo <= 0.0 && hi >= 0.0 {
        states.push(vec![0.0; d]);
    }
    for _ in 0..cfg.n_points {
        states.push((0..d).map(|_| rng.random_range(lo..hi)).collect());
    }
    let pairs = (0..cfg.n_pairs)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
            (x, y)
        })
        .collect();
    let dom = &model.theta_domain;
    let mut thetas = dom.corners();
    for _ in 0..cfg.n_theta {
        thetas.push((0..model.m).map(|k| rng.random_range(dom.lower[k]..dom.upper[k])).collect());
    }
    Ok(ProbeDesign { states, pairs, thetas })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Probe-based estimates of the standing assumptions on `b` and `σ`.
/// Violations are reported in the flags, never raised.
pub fn probe_assumptions(model: &ModelSpec, cfg: &ProbeConfig, seed: u64) -> Result<AssumptionReport> {
    let design = probe_design(model, cfg, seed)?;
    let mut lipschitz = 0.0f64;
    for (x, y) in &design.pairs {
        let dist = norm(&x.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dist == 0.0 {
            continue;
        }
        for th in &design.thetas {
            let diff = (model.drift)(x, th) - (model.drift)(y, th);
            lipschitz = lipschitz.max(diff.norm() / dist);
        }
    }

    let fd_step = 1e-5;
    let mut growth = Vec::new();
    for theta_order in 0..=MAX_THETA_ORDER {
        for x_order in 0..=1 {
            let mut sup = 0.0f64;
            for x in &design.states {
                let weight = 1.0 + norm(x).powf(cfg.growth_power);
                for th in &design.thetas {
                    let val = match (theta_order, x_order) {
                        (0, 0) => (model.drift)(x, th).norm(),
                        (0, 1) => (model.drift_dx)(x, th).norm(),
                        (k, 0) => norm(&(model.drift_dtheta)(k, x, th)),
                        (k, _) => {
                            // ∇_x ∇_θ^k b by central differences of the supplied θ-derivative
                            let mut acc = 0.0;
                            for c in 0..model.d {
                                let mut xp = x.clone();
                                let mut xm = x.clone();
                                xp[c] += fd_step;
                                xm[c] -= fd_step;
                                let fp = (model.drift_dtheta)(k, &xp, th);
                                let fm = (model.drift_dtheta)(k, &xm, th);
                                acc += fp
                                    .iter()
                                    .zip(&fm)
                                    .map(|(a, b)| ((a - b) / (2.0 * fd_step)).powi(2))
                                    .sum::<f64>();
                            }
                            acc.sqrt()
                        }
                    };
                    sup = sup.max(val / weight);
                }
            }
            growth.push(GrowthEntry { theta_order, x_order, value: sup });
        }
    }

    let mut det_min = f64::INFINITY;
    let mut sigma_bound = 0.0f64;
    let mut sublinear = Some(0.0f64);
    for x in &design.states {
        det_min = det_min.min(model.eval_a(x).determinant());
        let mut s = (model.diffusion)(x).norm();
        for ds in (model.diffusion_dx)(x) {
            s = s.max(ds.norm());
        }
        for row in (model.diffusion_dxx)(x) {
            for dds in row {
                s = s.max(dds.norm());
            }
        }
        sigma_bound = sigma_bound.max(s);
        match model.pullback(x) {
            Ok(p) => {
                if let Some(cur) = sublinear.as_mut() {
                    for th in &design.thetas {
                        let v = (&p * (model.drift)(x, th)).norm() / (1.0 + norm(x).powf(cfg.lambda));
                        *cur = cur.max(v);
                    }
                }
            }
            Err(_) => sublinear = None,
        }
    }

    let growth_ok = growth.iter().all(|g| g.value.is_finite() && g.value <= cfg.growth_max);
    let pass = AssumptionFlags {
        lipschitz_growth: lipschitz.is_finite() && lipschitz <= cfg.lipschitz_max && growth_ok,
        sigma_bounded: sigma_bound.is_finite() && sigma_bound <= cfg.sigma_bound_max,
        elliptic: det_min > cfg.det_floor,
    };
    Ok(AssumptionReport {
        model: model.name.clone(),
        lipschitz_estimate: lipschitz,
        polygrowth_estimate: growth,
        ellipticity_min: det_min,
        sigma_bound,
        sublinear_estimate: sublinear,
        pass,
    })
}
