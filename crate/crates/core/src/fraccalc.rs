//! Riemann–Liouville integrals on a uniform grid and the kernel transform
//! that whitens an fBm-driven observation.
//!
//! All quadratures are product-integration rules: the data is interpolated
//! piecewise linearly and the weakly singular kernel `(t − u)^{α−1}` is
//! integrated exactly against each hat function.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::{digamma, gamma};

use crate::error::{Error, Result};
use crate::fbm::TimeGrid;

/// Below this many steps the Toeplitz sum is evaluated directly.
const FFT_MIN_STEPS: usize = 64;

fn check_hurst(h: f64) -> Result<()> {
    if h > 1.0 / 3.0 && h <= 0.5 {
        Ok(())
    } else {
        Err(Error::Input(format!("H = {h} outside (1/3, 1/2]")))
    }
}

/// `d_H = sqrt(2H Γ(3/2 − H) Γ(H + 1/2) / Γ(2 − 2H))`.
pub fn d_h(h: f64) -> Result<f64> {
    check_hurst(h)?;
    if h == 0.5 {
        // every Γ argument is 1
        return Ok(1.0);
    }
    Ok((2.0 * h * gamma(1.5 - h) * gamma(h + 0.5) / gamma(2.0 - 2.0 * h)).sqrt())
}

/// `γ_H = (d_H Γ(1/2 − H))^{−2}`; a pole at `H = 1/2`.
pub fn gamma_h(h: f64) -> Result<f64> {
    let d = d_h(h)?;
    if h == 0.5 {
        return Err(Error::Pole("γ_H needs Γ(1/2 − H), which has a pole at H = 1/2".into()));
    }
    Ok((d * gamma(0.5 - h)).powi(-2))
}

/// `c_j = (j+1)^{α+1} − 2 j^{α+1} + (j−1)^{α+1}`, by its binomial series for
/// large `j` where the direct form cancels.
fn interior_weight(alpha: f64, j: usize) -> f64 {
    let p = alpha + 1.0;
    let jf = j as f64;
    if j < 16 {
        return (jf + 1.0).powf(p) - 2.0 * jf.powf(p) + (jf - 1.0).powf(p);
    }
    // 2 j^p Σ_{n≥1} C(p, 2n) j^{−2n}
    let x = 1.0 / (jf * jf);
    let mut binom = 1.0;
    let mut xn = 1.0;
    let mut sum = 0.0;
    for n in 1..=12 {
        let k = 2 * n;
        binom *= (p - (k - 2) as f64) * (p - (k - 1) as f64) / ((k - 1) as f64 * k as f64);
        xn *= x;
        let term = binom * xn;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    2.0 * jf.powf(p) * sum
}

/// `∫₀¹ (k − u)^{α−1} u^q du` for integer `k ≥ 1`.
fn first_interval_moment(alpha: f64, k: usize, q: f64) -> f64 {
    if k == 1 {
        return gamma(alpha) * gamma(q + 1.0) / gamma(alpha + q + 1.0);
    }
    let kf = k as f64;
    let mut coef = 1.0; // (1 − α)_n / n!
    let mut kn = 1.0;
    let mut sum = 0.0;
    for n in 0..400 {
        let term = coef * kn / (q + n as f64 + 1.0);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        coef *= (1.0 - alpha + n as f64) / (n as f64 + 1.0);
        kn /= kf;
    }
    kf.powf(alpha - 1.0) * sum
}

/// Precomputed product-integration weights for `I^α_{0+}` and `I^α_{t−}` on a
/// uniform grid.
///
/// `I^α_{0+} f (t_k) ≈ Σ_l w_{k,l} f(t_l)` with
/// `w_{k,0} = s·a_k`, `w_{k,l} = s·c_{k−l}` for `0 < l < k`, `w_{k,k} = s`,
/// `s = h^α / Γ(α + 2)`. The right-sided rule reuses the same weights mirrored.
pub struct FracKernelPlan {
    alpha: f64,
    grid: TimeGrid,
    scale: f64,
    /// `a_k`, index `k`.
    first: Vec<f64>,
    /// `c_j` with `c_0 = 1` for the diagonal weight.
    toeplitz: Vec<f64>,
    fft: Option<ToeplitzFft>,
}

struct ToeplitzFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
}

impl std::fmt::Debug for FracKernelPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FracKernelPlan")
            .field("alpha", &self.alpha)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl FracKernelPlan {
    /// Plan of order `α ∈ (0, 1)` on the coarse nodes of `grid`.
    pub fn new(alpha: f64, grid: &TimeGrid) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Input(format!("fractional order α = {alpha} outside (0, 1)")));
        }
        let n = grid.n_coarse;
        let h = grid.h_coarse();
        let p = alpha + 1.0;
        let first: Vec<f64> = (0..=n)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    let kf = k as f64;
                    (kf - 1.0).powf(p) - (kf - 1.0 - alpha) * kf.powf(alpha)
                }
            })
            .collect();
        let toeplitz: Vec<f64> = (0..=n).map(|j| if j == 0 { 1.0 } else { interior_weight(alpha, j) }).collect();
        let fft = (n >= FFT_MIN_STEPS).then(|| {
            let len = (2 * n + 2).next_power_of_two();
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(len);
            let inverse = planner.plan_fft_inverse(len);
            let mut spectrum = vec![Complex::new(0.0, 0.0); len];
            for (s, &c) in spectrum.iter_mut().zip(&toeplitz) {
                s.re = c;
            }
            forward.process(&mut spectrum);
            ToeplitzFft { len, forward, inverse, spectrum }
        });
        let plan = Self { alpha, grid: *grid, scale: h.powf(alpha) / gamma(alpha + 2.0), first, toeplitz, fft };
        if plan.first.iter().chain(&plan.toeplitz).any(|w| !w.is_finite()) {
            return Err(Error::Input(format!("non-finite weights for α = {alpha}")));
        }
        Ok(plan)
    }

    /// Plan of order `1/2 − H`; `None` for `H = 1/2`, where the operator is the identity.
    pub fn for_hurst(h: f64, grid: &TimeGrid) -> Result<Option<Self>> {
        check_hurst(h)?;
        if h == 0.5 {
            return Ok(None);
        }
        Self::new(0.5 - h, grid).map(Some)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Left weight `w_{k,l}`.
    pub fn weight(&self, k: usize, l: usize) -> f64 {
        match (k, l) {
            _ if l > k || k == 0 => 0.0,
            (_, 0) => self.scale * self.first[k],
            _ => self.scale * self.toeplitz[k - l],
        }
    }

    /// Weight of `f(t_m)` in `I^α_{t_k−} f (t_l)`, for `l ≤ m ≤ k`.
    pub fn right_weight(&self, k: usize, l: usize, m: usize) -> f64 {
        if !(l <= m && m <= k) || l == k {
            return 0.0;
        }
        if m == k {
            self.scale * self.first[k - l]
        } else {
            self.scale * self.toeplitz[m - l]
        }
    }

    /// `Σ_{l=1}^{k} c_{k−l} f_l` for every `k` (with `c_0 = 1`).
    fn toeplitz_sums(&self, f: &[f64]) -> Vec<f64> {
        let n = f.len() - 1;
        match &self.fft {
            Some(plan) => {
                let mut buf = vec![Complex::new(0.0, 0.0); plan.len];
                for (b, &v) in buf.iter_mut().zip(f).skip(1) {
                    b.re = v;
                }
                plan.forward.process(&mut buf);
                for (b, s) in buf.iter_mut().zip(&plan.spectrum) {
                    *b *= s;
                }
                plan.inverse.process(&mut buf);
                let norm = plan.len as f64;
                buf[..=n].iter().map(|c| c.re / norm).collect()
            }
            None => (0..=n)
                .map(|k| (1..=k).map(|l| self.toeplitz[k - l] * f[l]).sum())
                .collect(),
        }
    }

    fn check_samples(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.grid.n_coarse + 1 {
            return Err(Error::Input(format!(
                "expected {} grid samples, got {}",
                self.grid.n_coarse + 1,
                f.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite sample in fractional integral".into()));
        }
        Ok(())
    }
}

/// `I^α_{0+} f` at every coarse node; exact for piecewise-linear `f`, `0` at `t₀`.
pub fn rl_integral_left(plan: &FracKernelPlan, f: &[f64]) -> Result<Vec<f64>> {
    plan.check_samples(f)?;
    let sums = plan.toeplitz_sums(f);
    Ok((0..f.len())
        .map(|k| if k == 0 { 0.0 } else { plan.scale * (plan.first[k] * f[0] + sums[k]) })
        .collect())
}

/// `I^α_{0+}[s^p g]` where `g` is sampled on the grid (`g(0)` finite).
///
/// Identical to [`rl_integral_left`] applied to `t_l^p g_l` except on the first
/// interval, where `s^p` is integrated exactly against the linear interpolant of
/// `g`; this removes the leading error of the power singularity at 0.
pub fn rl_integral_left_power(plan: &FracKernelPlan, g: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0) {
        return Err(Error::Input(format!("power-start exponent {p} must be positive")));
    }
    plan.check_samples(g)?;
    let h = plan.grid.h_coarse();
    let f: Vec<f64> = g.iter().enumerate().map(|(l, &v)| if l == 0 { 0.0 } else { (l as f64 * h).powf(p) * v }).collect();
    let mut out = rl_integral_left(plan, &f)?;
    let pre = h.powf(plan.alpha + p) / gamma(plan.alpha);
    for (k, o) in out.iter_mut().enumerate().skip(1) {
        let m1 = first_interval_moment(plan.alpha, k, 1.0);
        let mp = first_interval_moment(plan.alpha, k, p);
        let mp1 = first_interval_moment(plan.alpha, k, p + 1.0);
        *o += pre * (g[0] * (mp - mp1) + g[1] * (mp1 - m1));
    }
    Ok(out)
}

/// `I^α_{t_k−} f` at nodes `t_0..=t_k`; `f` must cover at least `t_0..=t_k`.
pub fn rl_integral_right(plan: &FracKernelPlan, f: &[f64], k: usize) -> Result<Vec<f64>> {
    if k > plan.grid.n_coarse || f.len() <= k {
        return Err(Error::Input(format!("right integral endpoint {k} beyond the samples")));
    }
    if f[..=k].iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite sample in fractional integral".into()));
    }
    Ok((0..=k)
        .map(|l| (l..=k).map(|m| plan.right_weight(k, l, m) * f[m]).sum())
        .collect())
}

/// `∫₀^T f dt` from node samples, trapezoid on `[t_1, T]` and `f(t_1) h / (1 + p)`
/// on the first interval, which is exact when `f ∝ t^p` there.
pub fn power_start_trapezoid(f: &[f64], h: f64, p: f64) -> f64 {
    if f.len() < 2 {
        return 0.0;
    }
    let mut acc = f[1] * h / (1.0 + p);
    for w in f[1..].windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
    }
    acc
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// `F_a(z) = ∫₀^z v^{a−1} / (1 − v) dv` for `z ∈ [0, 1)`.
///
/// Power series below `1/2`; above, `ψ(1) − ψ(a) − ln(1 − z)` minus the
/// smooth tail `∫_z^1 (v^{a−1} − 1)/(1 − v) dv` by Gauss–Legendre.
pub(crate) fn kernel_primitive(a: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 0.5 {
        let mut zn = z.powf(a);
        let mut sum = 0.0;
        for n in 0..200 {
            let term = zn / (a + n as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            zn *= z;
        }
        return sum;
    }
    let (nodes, weights) = gl20();
    let half = 0.5 * (1.0 - z);
    let mut tail = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        // u = 1 − v
        let u = half * (1.0 - x);
        let num = ((a - 1.0) * (-u).ln_1p()).exp_m1();
        tail += w * num / u;
    }
    digamma(1.0) - digamma(a) - (-z).ln_1p() - half * tail
}

/// The kernel `κ(t, s) = d_H⁻¹ s^a I^a_{t−}[u^{−a}](s)`, `a = 1/2 − H`, that maps
/// `dY` to the increments of a Wiener process, tabulated at
/// `κ(t_k, (t_l + t_{l+1})/2)` for `l < k`.
///
/// With `s = t/(1 − v)` substituted this is `d_H⁻¹ Γ(a)⁻¹ s^a F_a(1 − s/t)`, and on
/// a uniform grid it factors as `h^a K(k, l)` with `K` free of `h`.
#[derive(Debug, Clone)]
pub struct InverseKernel {
    hurst: f64,
    grid: TimeGrid,
    /// Row `k` (1-based) occupies `rows[k(k−1)/2 ..][..k]`.
    rows: Vec<f64>,
}

impl InverseKernel {
    pub fn new(hurst: f64, grid: &TimeGrid) -> Result<Self> {
        check_hurst(hurst)?;
        let n = grid.n_coarse;
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        if hurst == 0.5 {
            rows.resize(n * (n + 1) / 2, 1.0);
        } else {
            let a = 0.5 - hurst;
            let c = grid.h_coarse().powf(a) / (d_h(hurst)? * gamma(a));
            for k in 1..=n {
                let kf = k as f64;
                for l in 0..k {
                    let mid = l as f64 + 0.5;
                    rows.push(c * mid.powf(a) * kernel_primitive(a, 1.0 - mid / kf));
                }
            }
        }
        Ok(Self { hurst, grid: *grid, rows })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `κ(t_k, mid_l)` for `l < k`.
    pub fn value(&self, k: usize, l: usize) -> f64 {
        assert!(l < k && k <= self.grid.n_coarse);
        self.rows[k * (k - 1) / 2 + l]
    }

    /// `W_{t_k} = Σ_{l<k} κ(t_k, mid_l) ΔY_l`, `W_0 = 0`.
    pub fn apply(&self, y_increments: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_coarse;
        if y_increments.len() != n {
            return Err(Error::Input(format!("expected {n} increments, got {}", y_increments.len())));
        }
        let mut w = Vec::with_capacity(n + 1);
        w.push(0.0);
        for k in 1..=n {
            let row = &self.rows[k * (k - 1) / 2..][..k];
            w.push(row.iter().zip(y_increments).map(|(a, b)| a * b).sum());
        }
        Ok(w)
    }
}

/// One-shot form of [`InverseKernel::apply`].
pub fn kh_inverse_transform(y_increments: &[f64], hurst: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    InverseKernel::new(hurst, grid)?.apply(y_increments)
}
