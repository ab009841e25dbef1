//! Fractional Brownian drivers and their second-order lift.
//!
//! Paths are sampled exactly on a *fine* grid with `n_coarse · 2^L` steps.
//! The lift keeps, for every *coarse* step, the increment `B_{t_k,t_{k+1}}` and
//! the area matrix `𝔹_{t_k,t_{k+1}}`; off-diagonal areas are left-point sums
//! over the fine subgrid. Values over longer intervals are rebuilt with Chen's
//! relation, so Chen holds by construction.

mod holder;
mod lift;
mod sampler;

pub use holder::{
    area_holder_seminorm, holder_seminorm, holder_seminorm_restricted, rough_path_seminorm,
    scalar_nodes, ALL_PAIRS_MAX_STEPS,
};
pub use lift::{chen_defect, lift, RoughPath};
pub use sampler::{fgn_autocovariance, sample_fbm, sample_fbm_with, FbmPath, SamplerKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hurst indices of the `r` independent driver components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstVector {
    h: Vec<f64>,
    diagnostic: bool,
}

impl HurstVector {
    /// Every `H_i` must lie in `(1/3, 1/2)`.
    pub fn new(h: Vec<f64>) -> Result<Self> {
        Self::build(h, false)
    }

    /// Also admits `H_i = 1/2`, for Brownian sanity checks.
    pub fn diagnostic(h: Vec<f64>) -> Result<Self> {
        Self::build(h, true)
    }

    fn build(h: Vec<f64>, diagnostic: bool) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Input("Hurst vector is empty".into()));
        }
        for (i, &hi) in h.iter().enumerate() {
            let ok = (hi > 1.0 / 3.0 && hi < 0.5) || (diagnostic && hi == 0.5);
            if !ok {
                return Err(Error::Input(format!("hurst[{i}] = {hi} outside (1/3, 1/2)")));
            }
        }
        Ok(Self { h, diagnostic })
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.h[i]
    }

    pub fn min(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_diagnostic(&self) -> bool {
        self.diagnostic
    }
}

/// Uniform two-level grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_coarse: usize,
    pub refine_level: u32,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_coarse: usize, refine_level: u32) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Input(format!("horizon must be positive, got {horizon}")));
        }
        if n_coarse < 2 {
            return Err(Error::Input(format!("n_coarse must be at least 2, got {n_coarse}")));
        }
        if refine_level > 20 {
            return Err(Error::Resource(format!("refine_level {refine_level} too large")));
        }
        Ok(Self { horizon, n_coarse, refine_level })
    }

    pub fn n_fine(&self) -> usize {
        self.n_coarse << self.refine_level
    }

    pub fn fine_per_coarse(&self) -> usize {
        1 << self.refine_level
    }

    pub fn h_coarse(&self) -> f64 {
        self.horizon / self.n_coarse as f64
    }

    pub fn h_fine(&self) -> f64 {
        self.horizon / self.n_fine() as f64
    }

    /// Coarse node `t_k`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_coarse {
            self.horizon
        } else {
            k as f64 * self.h_coarse()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_coarse).map(|k| self.node(k)).collect()
    }

    /// Index of the coarse node at time `t`, or an input error off the grid.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let x = t / self.h_coarse();
        let k = x.round();
        if !(0.0..=self.n_coarse as f64).contains(&k) || (x - k).abs() > 1e-9 {
            return Err(Error::Input(format!("t = {t} is not a grid node")));
        }
        Ok(k as usize)
    }

    /// Same horizon, `factor` times as many coarse steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.horizon, self.n_coarse * factor, self.refine_level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurst_validation() {
        assert!(HurstVector::new(vec![0.4, 0.45]).is_ok());
        assert!(HurstVector::new(vec![0.5]).is_err());
        assert!(HurstVector::diagnostic(vec![0.5]).is_ok());
        assert!(HurstVector::new(vec![0.3]).is_err());
        assert!(HurstVector::new(vec![0.6]).is_err());
        assert!(HurstVector::new(vec![]).is_err());
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(2.0, 8, 3).unwrap();
        assert_eq!(g.n_fine(), 64);
        assert_eq!(g.node(8), 2.0);
        assert_eq!(g.node_index(0.5).unwrap(), 2);
        assert!(g.node_index(0.3).is_err());
        assert!(g.node_index(2.5).is_err());
        assert!(TimeGrid::new(1.0, 1, 0).is_err());
    }
}
