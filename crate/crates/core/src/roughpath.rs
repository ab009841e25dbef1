//! Controlled paths and the compensated Riemann-sum rough integral.
//!
//! A controlled path `Z` takes values in `d × r` matrices. Its Gubinelli
//! derivative is stored as `r` matrices `Z'[j]` of the same shape, meaning
//! `Z_{s,t} ≈ Σ_j Z'_s[j] B^j_{s,t}`. With this layout the second-order
//! correction of a step is `Σ_{i,j} Z'[j][·, i] 𝔹^{ji}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fbm::RoughPath;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    /// `Z_{t_k}` at each coarse node.
    pub values: Vec<DMatrix<f64>>,
    /// `Z'_{t_k}[j]` at each coarse node.
    pub gubinelli: Vec<Vec<DMatrix<f64>>>,
}

/// A state-space path `X` with `X_{s,t} ≈ X'_s B_{s,t}` (`X'` is `d × r`).
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub values: Vec<DVector<f64>>,
    pub derivative: Vec<DMatrix<f64>>,
}

impl ControlledPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_against(&self, rp: &RoughPath) -> Result<()> {
        let n = rp.n_steps() + 1;
        if self.values.len() != n || self.gubinelli.len() != n {
            return Err(Error::Input(format!(
                "controlled path has {} nodes, rough path grid has {n}",
                self.values.len()
            )));
        }
        let r = rp.dim();
        if self.values.iter().any(|z| z.ncols() != r) || self.gubinelli.iter().any(|g| g.len() != r) {
            return Err(Error::Input("controlled path width does not match the driver".into()));
        }
        Ok(())
    }

    /// Constant path with zero derivative.
    pub fn constant(value: DMatrix<f64>, n_nodes: usize) -> Self {
        let r = value.ncols();
        let zero = DMatrix::zeros(value.nrows(), r);
        Self { values: vec![value; n_nodes], gubinelli: vec![vec![zero; r]; n_nodes] }
    }
}

/// `Z_{t_k} B_{t_k,t_{k+1}} + Σ_{i,j} Z'_{t_k}[j][·, i] 𝔹^{ji}_{t_k,t_{k+1}}`.
fn step_term(z: &ControlledPath, rp: &RoughPath, k: usize) -> DVector<f64> {
    let zk = &z.values[k];
    let r = rp.dim();
    let mut out = zk * DVector::from_column_slice(&rp.increments[k]);
    let area = &rp.areas[k];
    for (j, gj) in z.gubinelli[k].iter().enumerate() {
        for i in 0..r {
            let a = area[(j, i)];
            if a != 0.0 {
                out.axpy(a, &gj.column(i), 1.0);
            }
        }
    }
    out
}

/// `∫_{t_s}^{t_t} Z dB` as the sum of compensated steps, accumulated left to right.
pub fn rough_integral(z: &ControlledPath, rp: &RoughPath, s: usize, t: usize) -> Result<DVector<f64>> {
    z.check_against(rp)?;
    if s > t || t > rp.n_steps() {
        return Err(Error::Input(format!("bad integration range {s}..{t}")));
    }
    let d = z.values[0].nrows();
    let mut acc = DVector::zeros(d);
    for k in s..t {
        acc += step_term(z, rp, k);
    }
    Ok(acc)
}

/// Running integral `∫_0^{t_k} Z dB` at every node.
pub fn rough_integral_path(z: &ControlledPath, rp: &RoughPath) -> Result<Vec<DVector<f64>>> {
    z.check_against(rp)?;
    let d = z.values[0].nrows();
    let mut acc = DVector::zeros(d);
    let mut out = Vec::with_capacity(rp.n_steps() + 1);
    out.push(acc.clone());
    for k in 0..rp.n_steps() {
        acc += step_term(z, rp, k);
        out.push(acc.clone());
    }
    Ok(out)
}

/// Composition `φ(X)` with Gubinelli derivative `∇φ(X) X'`.
///
/// `phi` maps a state to a `d × r` matrix; `dphi` returns `[∂φ/∂x_c]`.
pub fn controlled_compose<F, G>(phi: F, dphi: G, x: &StatePath) -> ControlledPath
where
    F: Fn(&[f64]) -> DMatrix<f64>,
    G: Fn(&[f64]) -> Vec<DMatrix<f64>>,
{
    let mut values = Vec::with_capacity(x.values.len());
    let mut gubinelli = Vec::with_capacity(x.values.len());
    for (xv, xd) in x.values.iter().zip(&x.derivative) {
        let v = phi(xv.as_slice());
        let dv = dphi(xv.as_slice());
        let r_drv = xd.ncols();
        let g = (0..r_drv)
            .map(|j| {
                let mut acc = DMatrix::zeros(v.nrows(), v.ncols());
                for (c, dc) in dv.iter().enumerate() {
                    acc += dc * xd[(c, j)];
                }
                acc
            })
            .collect();
        values.push(v);
        gubinelli.push(g);
    }
    ControlledPath { values, gubinelli }
}

/// Outcome of [`remainder_exponent_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RemainderFit {
    /// Every residual is below `1e-14`: the one-step expansion is exact.
    Exact,
    Exponent(f64),
}

const EXACT_THRESHOLD: f64 = 1e-14;

/// Fits the local-expansion remainder
/// `|∫_s^t Z dB − Z_s B_{s,t} − Z'_s 𝔹_{s,t}| ~ |t − s|^κ` over dyadic intervals.
///
/// Intervals of `2, 4, 8, …` coarse steps tile the grid; the per-level mean
/// residual is regressed on `log |t − s|` by least squares. One-step
/// intervals are skipped since the grid sum reproduces them exactly.
pub fn remainder_exponent_fit(z: &ControlledPath, rp: &RoughPath, alpha: f64) -> Result<RemainderFit> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Input(format!("alpha = {alpha} outside (0, 1]")));
    }
    z.check_against(rp)?;
    let n = rp.n_steps();
    if n + 1 < 64 {
        return Err(Error::Input(format!("remainder fit needs at least 64 nodes, got {}", n + 1)));
    }
    let cumulative = rough_integral_path(z, rp)?;
    let h = rp.grid.h_coarse();
    let mut logs = Vec::new();
    let mut all_tiny = true;
    let mut len = 2usize;
    while len <= n {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut s = 0;
        while s + len <= n {
            let t = s + len;
            let mut res = &cumulative[t] - &cumulative[s];
            let area = rp.area(s, t);
            let single = ControlledPath {
                values: vec![z.values[s].clone()],
                gubinelli: vec![z.gubinelli[s].clone()],
            };
            let local = RoughPath {
                grid: rp.grid,
                increments: vec![rp.increment(s, t)],
                areas: vec![area],
                fine_increments: Vec::new(),
            };
            res -= step_term(&single, &local, 0);
            let r = res.norm();
            if r >= EXACT_THRESHOLD {
                all_tiny = false;
            }
            sum += r;
            count += 1;
            s = t;
        }
        let mean = sum / count as f64;
        if mean > 0.0 {
            logs.push(((len as f64 * h).ln(), mean.ln()));
        }
        len *= 2;
    }
    if all_tiny {
        return Ok(RemainderFit::Exact);
    }
    if logs.len() < 2 {
        return Err(Error::Input("too few dyadic levels with nonzero residual".into()));
    }
    Ok(RemainderFit::Exponent(least_squares_slope(&logs)))
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
