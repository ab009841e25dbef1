use nalgebra::DMatrix;

use super::{FbmPath, TimeGrid};
use crate::error::{Error, Result};

/// Increments and second-level areas of a driver, one entry per coarse step.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughPath {
    pub grid: TimeGrid,
    /// `increments[k][i] = B^i_{t_k, t_{k+1}}`.
    pub increments: Vec<Vec<f64>>,
    /// `areas[k] = 𝔹_{t_k, t_{k+1}}` (`r × r`).
    pub areas: Vec<DMatrix<f64>>,
    /// `fine_increments[i][m]`: fine-grid increments of component `i`.
    pub fine_increments: Vec<Vec<f64>>,
}

impl RoughPath {
    /// Assembles a rough path from per-step data. Fine increments may be empty
    /// when only coarse-grid operations are needed.
    pub fn from_parts(
        grid: TimeGrid,
        increments: Vec<Vec<f64>>,
        areas: Vec<DMatrix<f64>>,
        fine_increments: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let r = increments.first().map_or(0, Vec::len);
        if increments.len() != grid.n_coarse
            || areas.len() != grid.n_coarse
            || increments.iter().any(|v| v.len() != r)
            || areas.iter().any(|a| a.nrows() != r || a.ncols() != r)
        {
            return Err(Error::Input("rough path data does not match the grid".into()));
        }
        Ok(Self { grid, increments, areas, fine_increments })
    }

    pub fn dim(&self) -> usize {
        self.increments[0].len()
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    /// `B_{t_s, t_t}` between coarse nodes `s ≤ t`.
    pub fn increment(&self, s: usize, t: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for inc in &self.increments[s..t] {
            for (a, b) in acc.iter_mut().zip(inc) {
                *a += b;
            }
        }
        acc
    }

    /// `𝔹_{t_s, t_t}` between coarse nodes `s ≤ t`, built left to right with Chen.
    pub fn area(&self, s: usize, t: usize) -> DMatrix<f64> {
        let r = self.dim();
        let mut inc = vec![0.0; r];
        let mut area = DMatrix::zeros(r, r);
        for k in s..t {
            let step = &self.increments[k];
            area += &self.areas[k];
            for i in 0..r {
                for j in 0..r {
                    area[(i, j)] += inc[i] * step[j];
                }
            }
            for (a, b) in inc.iter_mut().zip(step) {
                *a += b;
            }
        }
        area
    }

    /// Path values `B_{t_k}` at coarse nodes (`n_coarse + 1` rows).
    pub fn coarse_path(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.n_steps() + 1);
        let mut acc = vec![0.0; self.dim()];
        rows.push(acc.clone());
        for inc in &self.increments {
            for (a, b) in acc.iter_mut().zip(inc) {
                *a += b;
            }
            rows.push(acc.clone());
        }
        rows
    }
}

/// Second-order lift of a fine-grid path onto its coarse grid.
///
/// For `i < j` the coarse-step area is the left-point sum
/// `Σ_m B^i_{t_k, v_m} ΔB^j_m` over the fine subgrid; the diagonal is
/// `½ (ΔB^i)²` and the lower triangle is `−𝔹^{ji} + ΔB^i ΔB^j`.
pub fn lift(path: &FbmPath) -> RoughPath {
    let grid = path.grid;
    let r = path.dim();
    if grid.refine_level == 0 && r >= 2 {
        log::warn!("refine_level = 0 with r = {r}: each Lévy area is a single-term sum");
    }
    let per = grid.fine_per_coarse();
    let fine_increments: Vec<Vec<f64>> = path
        .values
        .iter()
        .map(|v| v.windows(2).map(|w| w[1] - w[0]).collect())
        .collect();

    let mut increments = Vec::with_capacity(grid.n_coarse);
    let mut areas = Vec::with_capacity(grid.n_coarse);
    let mut acc = vec![0.0; r];
    for k in 0..grid.n_coarse {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut area = DMatrix::zeros(r, r);
        for m in k * per..(k + 1) * per {
            for i in 0..r {
                for j in i + 1..r {
                    area[(i, j)] += acc[i] * fine_increments[j][m];
                }
            }
            for (i, a) in acc.iter_mut().enumerate() {
                *a += fine_increments[i][m];
            }
        }
        // coarse increment from the path values, so it telescopes exactly
        let inc: Vec<f64> = (0..r).map(|i| path.at_coarse(i, k + 1) - path.at_coarse(i, k)).collect();
        for i in 0..r {
            area[(i, i)] = 0.5 * inc[i] * inc[i];
            for j in 0..i {
                area[(i, j)] = -area[(j, i)] + inc[i] * inc[j];
            }
        }
        increments.push(inc);
        areas.push(area);
    }
    RoughPath { grid, increments, areas, fine_increments }
}

/// `𝔹_{s,t} − 𝔹_{s,u} − 𝔹_{u,t} − B_{s,u} ⊗ B_{u,t}` for grid times `s ≤ u ≤ t`.
pub fn chen_defect(rp: &RoughPath, s: f64, u: f64, t: f64) -> Result<DMatrix<f64>> {
    let (si, ui, ti) = (rp.grid.node_index(s)?, rp.grid.node_index(u)?, rp.grid.node_index(t)?);
    if !(si <= ui && ui <= ti) {
        return Err(Error::Input(format!("chen_defect needs s ≤ u ≤ t, got ({s}, {u}, {t})")));
    }
    let bsu = rp.increment(si, ui);
    let but = rp.increment(ui, ti);
    let r = rp.dim();
    let outer = DMatrix::from_fn(r, r, |i, j| bsu[i] * but[j]);
    Ok(rp.area(si, ti) - rp.area(si, ui) - rp.area(ui, ti) - outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, HurstVector};
    use crate::rng::StreamKey;

    fn smooth_lift(level: u32) -> RoughPath {
        let grid = TimeGrid::new(1.0, 2, level).unwrap();
        let t: Vec<f64> = (0..=grid.n_fine()).map(|m| m as f64 * grid.h_fine()).collect();
        lift(&FbmPath::from_values(grid, vec![t.clone(), t]).unwrap())
    }

    #[test]
    fn smooth_area_converges_to_one_half() {
        let rp = smooth_lift(12);
        let a = rp.area(0, 2)[(0, 1)];
        assert!((a - 0.5).abs() <= 1e-3, "𝔹^12 = {a}");
        let coarse = smooth_lift(2).area(0, 2)[(0, 1)];
        assert!((coarse - 0.5).abs() > (a - 0.5).abs());
    }

    #[test]
    fn diagonal_and_symmetry_rules() {
        let hv = HurstVector::new(vec![0.4, 0.42, 0.45]).unwrap();
        let grid = TimeGrid::new(1.0, 16, 3).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid, StreamKey::new(3, 1)).unwrap());
        for k in 0..16 {
            let inc = &rp.increments[k];
            let a = &rp.areas[k];
            for i in 0..3 {
                assert_eq!(a[(i, i)], 0.5 * inc[i] * inc[i]);
                for j in 0..3 {
                    assert!((a[(i, j)] + a[(j, i)] - inc[i] * inc[j]).abs() < 1e-15);
                }
            }
        }
        let total = rp.increment(0, 16);
        let big = rp.area(0, 16);
        for i in 0..3 {
            assert!((big[(i, i)] - 0.5 * total[i] * total[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn chen_defect_examples() {
        let hv = HurstVector::new(vec![0.4, 0.4]).unwrap();
        let grid = TimeGrid::new(1.0, 32, 4).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid, StreamKey::new(8, 0)).unwrap());
        assert_eq!(chen_defect(&rp, 0.25, 0.25, 0.75).unwrap().norm(), 0.0);
        assert_eq!(chen_defect(&rp, 0.25, 0.75, 0.75).unwrap().norm(), 0.0);
        assert!(chen_defect(&rp, 0.0, 0.5, 1.0).unwrap().norm() <= 1e-12);
        assert!(chen_defect(&rp, 0.0, 0.3, 1.0).is_err());
        assert!(chen_defect(&rp, 0.5, 0.25, 1.0).is_err());
    }

    #[test]
    fn lift_on_the_coarse_grid_only_has_single_term_areas() {
        let hv = HurstVector::new(vec![0.4, 0.4]).unwrap();
        let grid = TimeGrid::new(1.0, 8, 0).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid, StreamKey::new(1, 0)).unwrap());
        // single left-point term starts from a zero increment
        for a in &rp.areas {
            assert_eq!(a[(0, 1)], 0.0);
        }
    }
}
