use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{HurstVector, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Largest fine grid the circulant sampler accepts.
const MAX_FINE_STEPS: usize = 1 << 24;
/// Largest fine grid the dense Cholesky sampler accepts.
const MAX_CHOLESKY_STEPS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Circulant embedding, falling back to Cholesky if the embedding is not PSD.
    #[default]
    Circulant,
    Cholesky,
}

/// An `r`-component path on the fine grid, `B_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub grid: TimeGrid,
    /// `values[i][m]` is component `i` at fine node `m`.
    pub values: Vec<Vec<f64>>,
}

impl FbmPath {
    /// Wraps externally built fine-grid values (`n_fine + 1` per component).
    pub fn from_values(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| v.len() != grid.n_fine() + 1) {
            return Err(Error::Input(format!(
                "each component needs {} fine-node values",
                grid.n_fine() + 1
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Component `i` at coarse node `k`.
    pub fn at_coarse(&self, i: usize, k: usize) -> f64 {
        self.values[i][k * self.grid.fine_per_coarse()]
    }
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Samples every component independently from its own `(seed, replicate, i)` stream.
pub fn sample_fbm(hurst: &HurstVector, grid: &TimeGrid, key: StreamKey) -> Result<FbmPath> {
    sample_fbm_with(hurst, grid, key, SamplerKind::Circulant)
}

pub fn sample_fbm_with(
    hurst: &HurstVector,
    grid: &TimeGrid,
    key: StreamKey,
    kind: SamplerKind,
) -> Result<FbmPath> {
    let n = grid.n_fine();
    if n > MAX_FINE_STEPS {
        return Err(Error::Resource(format!("{n} fine steps exceed the sampler limit")));
    }
    let values = hurst
        .values()
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let mut rng = key.component_rng(i);
            let noise = match kind {
                SamplerKind::Circulant => match circulant_fgn(h, n, &mut rng) {
                    Some(v) => v,
                    None => {
                        log::warn!("circulant embedding not PSD for H = {h}, n = {n}; using Cholesky");
                        cholesky_fgn(h, n, &mut rng)?
                    }
                },
                SamplerKind::Cholesky => cholesky_fgn(h, n, &mut rng)?,
            };
            let scale = grid.h_fine().powf(h);
            let mut path = Vec::with_capacity(n + 1);
            let mut acc = 0.0;
            path.push(0.0);
            for z in noise {
                acc += scale * z;
                path.push(acc);
            }
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FbmPath { grid: *grid, values })
}

/// Unit-step fGn of length `n` by circulant embedding; `None` when the
/// embedding has a significantly negative eigenvalue.
fn circulant_fgn<R: Rng>(hurst: f64, n: usize, rng: &mut R) -> Option<Vec<f64>> {
    let size = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..size)
        .map(|k| {
            let lag = if k <= n { k } else { size - k };
            Complex::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut row);
    let max = row.iter().map(|c| c.re).fold(0.0f64, f64::max);
    if row.iter().any(|c| c.re < -1e-10 * max) {
        return None;
    }
    let norm = size as f64;
    let mut xi: Vec<Complex<f64>> = row
        .iter()
        .map(|lam| {
            let amp = (lam.re.max(0.0) / norm).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(amp * re, amp * im)
        })
        .collect();
    fft.process(&mut xi);
    Some(xi[..n].iter().map(|c| c.re).collect())
}

fn cholesky_fgn<R: Rng>(hurst: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n > MAX_CHOLESKY_STEPS {
        return Err(Error::Resource(format!("Cholesky fGn sampler limited to {MAX_CHOLESKY_STEPS} steps, got {n}")));
    }
    let lags: Vec<f64> = (0..n).map(|k| fgn_autocovariance(hurst, k)).collect();
    let cov = DMatrix::from_fn(n, n, |a, b| lags[a.abs_diff(b)]);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Input(format!("fGn covariance not positive definite (H = {hurst})")))?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((chol.l() * z).iter().copied().collect())
}
