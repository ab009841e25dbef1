use proptest::prelude::*;

use fracmle::fbm::{chen_defect, fgn_autocovariance, lift, sample_fbm, HurstVector, TimeGrid};
use fracmle::fraccalc::{kh_inverse_transform, rl_integral_left, FracKernelPlan, InverseKernel};
use fracmle::inference::{compute_q, lhs_starts, LikelihoodContext, TransformPlans};
use fracmle::model::{linear1d, ParamBox};
use fracmle::rde::solve_rde;
use fracmle::rng::StreamKey;
use statrs::function::gamma::gamma;

fn grid(n: usize, level: u32) -> TimeGrid {
    TimeGrid::new(1.0, n, level).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chen_holds_on_every_lift(seed in any::<u64>(), h in 0.34f64..0.49, s in 0usize..=32, u in 0usize..=32, t in 0usize..=32) {
        let mut idx = [s, u, t];
        idx.sort();
        let rp = lift(&sample_fbm(&HurstVector::new(vec![h, 0.4, 0.45]).unwrap(), &grid(32, 4), StreamKey::new(seed, 0)).unwrap());
        let at = |k: usize| k as f64 / 32.0;
        prop_assert!(chen_defect(&rp, at(idx[0]), at(idx[1]), at(idx[2])).unwrap().amax() <= 1e-12);
    }

    #[test]
    fn weights_integrate_constants_exactly(alpha in 0.02f64..0.98, n in 2usize..300) {
        let plan = FracKernelPlan::new(alpha, &grid(n, 0)).unwrap();
        let out = rl_integral_left(&plan, &vec![1.0; n + 1]).unwrap();
        prop_assert_eq!(out[0], 0.0);
        for (k, v) in out.iter().enumerate() {
            let exact = (k as f64 / n as f64).powf(alpha) / gamma(alpha + 1.0);
            prop_assert!((v - exact).abs() <= 1e-10 * exact.max(1.0), "k = {}: {} vs {}", k, v, exact);
            let row: f64 = (0..=k).map(|l| plan.weight(k, l)).sum();
            prop_assert!((row - exact).abs() <= 1e-10 * exact.max(1.0));
        }
    }

    #[test]
    fn integrals_scale_bit_exactly_by_powers_of_two(alpha in 0.05f64..0.95, p in -6i32..6, seed in any::<u64>()) {
        let n = 64;
        let plan = FracKernelPlan::new(alpha, &grid(n, 0)).unwrap();
        let f = sample_fbm(&HurstVector::new(vec![0.4]).unwrap(), &grid(n, 0), StreamKey::new(seed, 0)).unwrap().values.remove(0);
        let c = 2f64.powi(p);
        let a = rl_integral_left(&plan, &f).unwrap();
        let b = rl_integral_left(&plan, &f.iter().map(|v| c * v).collect::<Vec<_>>()).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| c * x == *y));
    }

    #[test]
    fn inverse_transform_is_linear(seed in any::<u64>(), c in -3.0f64..3.0) {
        let g = grid(48, 0);
        let hv = HurstVector::new(vec![0.4]).unwrap();
        let x = sample_fbm(&hv, &g, StreamKey::new(seed, 0)).unwrap().values.remove(0);
        let y = sample_fbm(&hv, &g, StreamKey::new(seed, 1)).unwrap().values.remove(0);
        let inc = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>();
        let (dx, dy) = (inc(&x), inc(&y));
        let comb: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a + c * b).collect();
        let wx = kh_inverse_transform(&dx, 0.4, &g).unwrap();
        let wy = kh_inverse_transform(&dy, 0.4, &g).unwrap();
        let wc = kh_inverse_transform(&comb, 0.4, &g).unwrap();
        for k in 0..=48 {
            prop_assert!((wc[k] - wx[k] - c * wy[k]).abs() <= 1e-12 * (1.0 + wc[k].abs()));
        }
    }

    #[test]
    fn q_is_linear_in_a_linear_drift(theta in 0.1f64..2.5, seed in any::<u64>()) {
        let model = linear1d();
        let g = grid(64, 0);
        let hv = HurstVector::new(vec![0.4]).unwrap();
        let rp = lift(&sample_fbm(&hv, &g, StreamKey::new(seed, 0)).unwrap());
        let traj = solve_rde(&model, &[1.0], 0.1, &rp, &[1.0]).unwrap();
        let plans = TransformPlans::new(&hv, &g).unwrap();
        let q1 = compute_q(&model, &traj.states, &[theta], 0.1, &plans, 0).unwrap();
        let q2 = compute_q(&model, &traj.states, &[2.0 * theta], 0.1, &plans, 0).unwrap();
        prop_assert!(q1.values[0].iter().zip(&q2.values[0]).all(|(a, b)| 2.0 * a == *b));
    }

    #[test]
    fn linear_model_likelihood_is_quadratic(theta in 0.1f64..5.0, seed in any::<u64>()) {
        let model = linear1d();
        let hv = HurstVector::new(vec![0.4]).unwrap();
        let rp = lift(&sample_fbm(&hv, &grid(64, 0), StreamKey::new(seed, 0)).unwrap());
        let traj = solve_rde(&model, &[1.0], 0.2, &rp, &[1.0]).unwrap();
        let ctx = LikelihoodContext::new(&model, &traj, &hv).unwrap();
        let at0 = ctx.evaluate(&[1.0], 2).unwrap();
        let (g, h) = (at0.grad.unwrap()[0], at0.hessian.unwrap()[(0, 0)]);
        let v = ctx.evaluate(&[theta], 0).unwrap().value;
        let d = theta - 1.0;
        let expected = at0.value + d * g + 0.5 * d * d * h;
        prop_assert!((v - expected).abs() <= 1e-9 * (1.0 + v.abs()));
        prop_assert!(h < 0.0);
    }

    #[test]
    fn starts_cover_every_stratum(n in 1usize..20, seed in any::<u64>()) {
        let dom = ParamBox::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 3.0]).unwrap();
        let starts = lhs_starts(&dom, n, seed);
        prop_assert_eq!(starts.len(), n);
        for j in 0..3 {
            let mut strata: Vec<usize> = starts
                .iter()
                .map(|p| (((p[j] - dom.lower[j]) / dom.width(j) * n as f64).floor() as usize).min(n - 1))
                .collect();
            strata.sort();
            prop_assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct(seed in any::<u64>(), rep in 0u64..1000) {
        let hv = HurstVector::new(vec![0.4, 0.4]).unwrap();
        let g = grid(16, 1);
        let a = sample_fbm(&hv, &g, StreamKey::new(seed, rep)).unwrap();
        prop_assert_eq!(&a, &sample_fbm(&hv, &g, StreamKey::new(seed, rep)).unwrap());
        prop_assert_ne!(&a.values[0], &a.values[1]);
        prop_assert_ne!(&a, &sample_fbm(&hv, &g, StreamKey::new(seed, rep + 1)).unwrap());
    }
}

/// `W_{t_{k2}} − W_{t_{k1}} = Σ_l c_l ΔB_l`; the coefficient vector of that increment.
fn block_coefficients(kernel: &InverseKernel, n: usize, k1: usize, k2: usize) -> Vec<f64> {
    (0..n)
        .map(|l| {
            let hi = if l < k2 { kernel.value(k2, l) } else { 0.0 };
            let lo = if l < k1 { kernel.value(k1, l) } else { 0.0 };
            hi - lo
        })
        .collect()
}

/// Increments of `W` over disjoint quarters of `[0, 1]` are uncorrelated: exactly
/// under the fGn covariance, and empirically over 500 sampled paths.
#[test]
fn transformed_increments_are_white() {
    let n = 256;
    let g = grid(n, 0);
    let kernel = InverseKernel::new(0.4, &g).unwrap();
    let coef: Vec<Vec<f64>> = (0..4).map(|q| block_coefficients(&kernel, n, q * n / 4, (q + 1) * n / 4)).collect();
    let step_var = g.h_coarse().powf(0.8);
    let exact = |a: usize, b: usize| {
        let mut t = 0.0;
        for l in 0..n {
            for m in 0..n {
                t += coef[a][l] * coef[b][m] * fgn_autocovariance(0.4, l.abs_diff(m)) * step_var;
            }
        }
        t
    };

    let hv = HurstVector::new(vec![0.4]).unwrap();
    let blocks: Vec<Vec<f64>> = (0..500)
        .map(|rep| {
            let b = sample_fbm(&hv, &g, StreamKey::new(77, rep)).unwrap().values.remove(0);
            let inc: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
            let w = kernel.apply(&inc).unwrap();
            (0..4).map(|q| w[(q + 1) * n / 4] - w[q * n / 4]).collect()
        })
        .collect();
    let m = 500.0;
    let mean: Vec<f64> = (0..4).map(|q| blocks.iter().map(|b| b[q]).sum::<f64>() / m).collect();
    let cov = |a: usize, b: usize| blocks.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (m - 1.0);
    for a in 0..4 {
        assert!((exact(a, a) - 0.25).abs() <= 2e-3, "block {a}: variance {}", exact(a, a));
        for b in a + 1..4 {
            let exact_corr = exact(a, b) / (exact(a, a) * exact(b, b)).sqrt();
            assert!(exact_corr.abs() <= 1e-2, "blocks {a}, {b}: exact correlation {exact_corr}");
            // five standard errors at 500 paths
            let corr = cov(a, b) / (cov(a, a) * cov(b, b)).sqrt();
            assert!(corr.abs() <= 0.225, "blocks {a}, {b}: sample correlation {corr}");
        }
    }
}
