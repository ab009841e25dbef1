//! CSV and JSON-lines files for trajectories, drivers and study records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm::{FbmPath, RoughPath, TimeGrid};
use crate::rde::Trajectory;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

/// A header row plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_err(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| csv_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self { header, rows })
    }
}

/// Columns `t, X1, …, Xd`, one row per coarse node.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let d = traj.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("X{j}")));
    let rows = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| std::iter::once(traj.grid.node(k)).chain(x.iter().copied()).map(|v| v.to_string()).collect())
        .collect();
    CsvTable { header, rows }.write(path)
}

/// Reads a file in the format of [`write_trajectory_csv`]. The nodes must be
/// uniform and start at zero; `epsilon` and `theta_used` are not stored in
/// the file and are supplied by the caller.
pub fn read_trajectory_csv(path: &Path, epsilon: f64, theta_used: Vec<f64>) -> Result<Trajectory> {
    let table = CsvTable::read(path)?;
    if table.header.first().map(String::as_str) != Some("t") || table.header.len() < 2 {
        return Err(Error::Input(format!("{}: expected header `t,X1,...`", path.display())));
    }
    let parsed: Vec<Vec<f64>> = table
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter()
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Input(format!("{}: row {}: `{c}` is not a number", path.display(), k + 1)))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    if parsed.len() < 2 {
        return Err(Error::Input(format!("{}: need at least two rows", path.display())));
    }
    let n = parsed.len() - 1;
    let horizon = parsed[n][0];
    let grid = TimeGrid::new(horizon, n, 0)?;
    for (k, row) in parsed.iter().enumerate() {
        if (row[0] - grid.node(k)).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::Input(format!("{}: time column is not a uniform grid from 0", path.display())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("{}: row {} has a non-finite value", path.display(), k + 1)));
        }
    }
    Ok(Trajectory {
        grid,
        states: parsed.into_iter().map(|row| row[1..].to_vec()).collect(),
        epsilon,
        theta_used,
        seed: None,
        replicate: None,
    })
}

/// Columns `t, B1, …, Br` at coarse nodes.
pub fn write_driver_csv(path_b: &FbmPath, path: &Path) -> Result<()> {
    let r = path_b.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=r).map(|i| format!("B{i}")));
    let rows = (0..=path_b.grid.n_coarse)
        .map(|k| {
            std::iter::once(path_b.grid.node(k))
                .chain((0..r).map(|i| path_b.at_coarse(i, k)))
                .map(|v| v.to_string())
                .collect()
        })
        .collect();
    CsvTable { header, rows }.write(path)
}

/// Long format `k, i, j, value` for `𝔹^{ij}_{t_k, t_{k+1}}` (1-based `i`, `j`).
pub fn write_areas_csv(rp: &RoughPath, path: &Path) -> Result<()> {
    let header = ["k", "i", "j", "value"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for (k, a) in rp.areas.iter().enumerate() {
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                rows.push(vec![k.to_string(), (i + 1).to_string(), (j + 1).to_string(), a[(i, j)].to_string()]);
            }
        }
    }
    CsvTable { header, rows }.write(path)
}

/// One compact JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{lift, sample_fbm, HurstVector};
    use crate::model::linear1d;
    use crate::rde::solve_rde;
    use crate::rng::StreamKey;

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TimeGrid::new(2.0, 32, 1).unwrap();
        let rp = lift(&sample_fbm(&HurstVector::new(vec![0.4]).unwrap(), &grid, StreamKey::new(1, 0)).unwrap());
        let traj = solve_rde(&linear1d(), &[1.0], 0.1, &rp, &[1.0]).unwrap();
        let file = dir.path().join("x.csv");
        write_trajectory_csv(&traj, &file).unwrap();
        let back = read_trajectory_csv(&file, 0.1, vec![1.0]).unwrap();
        assert_eq!(back.states, traj.states);
        assert_eq!(back.grid.n_coarse, 32);
        assert_eq!(back.grid.horizon, 2.0);

        write_areas_csv(&rp, &dir.path().join("a.csv")).unwrap();
        assert_eq!(CsvTable::read(&dir.path().join("a.csv")).unwrap().rows.len(), 32);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.csv");
        std::fs::write(&file, "t,X1\n0,1\n0.5,abc\n1,2\n").unwrap();
        assert!(read_trajectory_csv(&file, 0.1, vec![1.0]).is_err());
        std::fs::write(&file, "t,X1\n0,1\n0.7,1\n1,2\n").unwrap();
        assert!(read_trajectory_csv(&file, 0.1, vec![1.0]).is_err());
        assert!(read_trajectory_csv(&dir.path().join("missing.csv"), 0.1, vec![1.0]).is_err());
    }
}
