use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Fewest samples [`normality_report`] accepts.
pub const MIN_SAMPLES: usize = 30;
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Unbiased sample covariance, row-major rows.
    pub cov: Vec<Vec<f64>>,
    /// `‖cov − Γ⁻¹‖_F / ‖Γ⁻¹‖_F`.
    pub cov_rel_error: f64,
    /// Moments of `z = Γ^{1/2} u`, per coordinate.
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// Anderson–Darling `A²` of each `z` coordinate against `N(0, 1)`.
    pub anderson_darling: Vec<f64>,
    /// Some coordinate has zero sample variance.
    pub degenerate: bool,
}

/// Symmetric square root, refusing matrices with an eigenvalue at or below the floor.
pub fn sym_sqrt(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new((gamma + gamma.transpose()) * 0.5);
    if eig.eigenvalues.iter().any(|&v| !(v > EIGEN_FLOOR)) {
        return Err(Error::Standardization(format!("Γ is singular: eigenvalues {:?}", eig.eigenvalues.as_slice())));
    }
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

pub fn sample_mean(samples: &[Vec<f64>]) -> Vec<f64> {
    let m = samples[0].len();
    let n = samples.len() as f64;
    (0..m).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect()
}

pub fn sample_cov(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let m = samples[0].len();
    let mean = sample_mean(samples);
    let mut cov = DMatrix::zeros(m, m);
    for s in samples {
        for a in 0..m {
            for b in 0..m {
                cov[(a, b)] += (s[a] - mean[a]) * (s[b] - mean[b]);
            }
        }
    }
    cov / (samples.len() as f64 - 1.0)
}

fn anderson_darling(mut z: Vec<f64>) -> f64 {
    let std = Normal::standard();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let nf = n as f64;
    let tiny = 1e-300;
    let s: f64 = (0..n)
        .map(|i| {
            let lo = std.cdf(z[i]).max(tiny).ln();
            let hi = (1.0 - std.cdf(z[n - 1 - i])).max(tiny).ln();
            (2.0 * i as f64 + 1.0) * (lo + hi)
        })
        .sum();
    -nf - s / nf
}

/// Compares samples of `u` with `N(0, Γ⁻¹)`.
pub fn normality_report(samples: &[Vec<f64>], gamma: &DMatrix<f64>) -> Result<NormalityReport> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Input(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    let m = gamma.nrows();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::Input(format!("samples must have dimension {m}")));
    }
    let root = sym_sqrt(gamma)?;
    let inv = gamma.clone().try_inverse().ok_or_else(|| Error::Standardization("Γ is not invertible".into()))?;
    let mean = sample_mean(samples);
    let cov = sample_cov(samples);
    let cov_rel_error = (&cov - &inv).norm() / inv.norm();

    let z: Vec<DVector<f64>> = samples.iter().map(|s| &root * DVector::from_column_slice(s)).collect();
    let nf = samples.len() as f64;
    let mut skewness = Vec::with_capacity(m);
    let mut excess_kurtosis = Vec::with_capacity(m);
    let mut anderson = Vec::with_capacity(m);
    let mut degenerate = false;
    for j in 0..m {
        let col: Vec<f64> = z.iter().map(|v| v[j]).collect();
        let mu = col.iter().sum::<f64>() / nf;
        let m2 = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / nf;
        let m3 = col.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / nf;
        let m4 = col.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / nf;
        if m2.sqrt() <= 1e-12 * mu.abs() || m2 == 0.0 {
            degenerate = true;
            skewness.push(f64::NAN);
            excess_kurtosis.push(f64::NAN);
        } else {
            skewness.push(m3 / m2.powf(1.5));
            excess_kurtosis.push(m4 / (m2 * m2) - 3.0);
        }
        anderson.push(anderson_darling(col));
    }
    let cov_rows = (0..m).map(|a| cov.row(a).iter().copied().collect()).collect();
    Ok(NormalityReport {
        n: samples.len(),
        mean,
        cov: cov_rows,
        cov_rel_error,
        skewness,
        excess_kurtosis,
        anderson_darling: anderson,
        degenerate,
    })
}
