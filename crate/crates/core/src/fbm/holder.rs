//! Discrete Hölder seminorms over grid-node pairs.

use super::RoughPath;
use crate::error::{Error, Result};

/// Grids up to this many steps use every node pair; larger grids use pairs
/// whose separation is a power of two.
pub const ALL_PAIRS_MAX_STEPS: usize = 1024;

fn check_exponent(alpha: f64, max: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= max {
        Ok(())
    } else {
        Err(Error::Input(format!("Hölder exponent {alpha} outside (0, {max}]")))
    }
}

fn pair_separations(n_steps: usize) -> Vec<usize> {
    if n_steps <= ALL_PAIRS_MAX_STEPS {
        (1..=n_steps).collect()
    } else {
        std::iter::successors(Some(1usize), |s| Some(s * 2)).take_while(|&s| s <= n_steps).collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Wraps a scalar series as node-major one-element rows.
pub fn scalar_nodes(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}

/// `max |Y_t − Y_s| / |t − s|^α` over node pairs; `values[k]` is the path at node `k`, spacing `h`.
pub fn holder_seminorm(values: &[Vec<f64>], h: f64, alpha: f64) -> Result<f64> {
    holder_seminorm_restricted(values, h, alpha, f64::INFINITY)
}

/// Same as [`holder_seminorm`] but only over pairs with `|t − s| ≤ delta`.
pub fn holder_seminorm_restricted(values: &[Vec<f64>], h: f64, alpha: f64, delta: f64) -> Result<f64> {
    check_exponent(alpha, 1.0)?;
    let n = values.len().saturating_sub(1);
    let mut best = 0.0f64;
    for sep in pair_separations(n) {
        let len = sep as f64 * h;
        if len > delta * (1.0 + 1e-12) {
            break;
        }
        let scale = len.powf(alpha);
        for s in 0..=n - sep {
            best = best.max(dist(&values[s + sep], &values[s]) / scale);
        }
    }
    Ok(best)
}

/// `max |𝔹_{s,t}| / |t − s|^{2α}` over coarse node pairs (Frobenius norm).
pub fn area_holder_seminorm(rp: &RoughPath, two_alpha: f64) -> Result<f64> {
    check_exponent(two_alpha, 2.0)?;
    let r = rp.dim();
    let n = rp.n_steps();
    let h = rp.grid.h_coarse();
    // prefix values B_{0,t_k} and 𝔹_{0,t_k}; then 𝔹_{s,t} = 𝔹_{0,t} − 𝔹_{0,s} − B_{0,s} ⊗ B_{s,t}
    let path = rp.coarse_path();
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = nalgebra::DMatrix::zeros(r, r);
    prefix.push(acc.clone());
    for k in 0..n {
        acc += &rp.areas[k];
        for i in 0..r {
            for j in 0..r {
                acc[(i, j)] += path[k][i] * rp.increments[k][j];
            }
        }
        prefix.push(acc.clone());
    }
    let mut best = 0.0f64;
    for sep in pair_separations(n) {
        let scale = (sep as f64 * h).powf(two_alpha);
        for s in 0..=n - sep {
            let t = s + sep;
            let mut sq = 0.0;
            for i in 0..r {
                for j in 0..r {
                    let v = prefix[t][(i, j)] - prefix[s][(i, j)] - path[s][i] * (path[t][j] - path[s][j]);
                    sq += v * v;
                }
            }
            best = best.max(sq.sqrt() / scale);
        }
    }
    Ok(best)
}

/// `‖B‖_α + ‖𝔹‖_{2α}^{1/2}`.
pub fn rough_path_seminorm(rp: &RoughPath, alpha: f64) -> Result<f64> {
    let b = holder_seminorm(&rp.coarse_path(), rp.grid.h_coarse(), alpha)?;
    Ok(b + area_holder_seminorm(rp, 2.0 * alpha)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{lift, sample_fbm, HurstVector, TimeGrid};
    use crate::rng::StreamKey;

    #[test]
    fn constant_and_linear_paths() {
        let c = scalar_nodes(&[3.0; 11]);
        assert_eq!(holder_seminorm(&c, 0.1, 0.4).unwrap(), 0.0);
        let lin: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let v = holder_seminorm(&scalar_nodes(&lin), 0.01, 0.4).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn exponent_validation() {
        let c = scalar_nodes(&[0.0; 4]);
        assert!(holder_seminorm(&c, 0.1, 0.0).is_err());
        assert!(holder_seminorm(&c, 0.1, 1.5).is_err());
        assert!(holder_seminorm(&c, 0.1, 1.0).is_ok());
    }

    #[test]
    fn area_seminorm_matches_chen_reconstruction() {
        let hv = HurstVector::new(vec![0.4, 0.45]).unwrap();
        let grid = TimeGrid::new(1.0, 32, 3).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid, StreamKey::new(2, 2)).unwrap());
        let fast = area_holder_seminorm(&rp, 0.8).unwrap();
        let h = grid.h_coarse();
        let mut slow = 0.0f64;
        for s in 0..32 {
            for t in s + 1..=32 {
                slow = slow.max(rp.area(s, t).norm() / ((t - s) as f64 * h).powf(0.8));
            }
        }
        assert!((fast - slow).abs() <= 1e-10 * slow, "{fast} vs {slow}");
        assert!(rough_path_seminorm(&rp, 0.4).unwrap().is_finite());
    }
}
