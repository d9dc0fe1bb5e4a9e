mod common;

use common::*;
use diffkalman_core::kalman::loglik;
use diffkalman_core::{maximize, multistart, InitialCondition, Matrix, Method, OptimizerConfig, TrendSpec};
use diffkalman_core::models::StructuralModel;
use nalgebra::{DMatrix, SymmetricEigen};

fn max_eigenvalue(h: &Matrix) -> f64 {
    let n = h.rows();
    let m = DMatrix::from_fn(n, n, |i, j| h[(i, j)]);
    SymmetricEigen::new(m).eigenvalues.max()
}

/// Maximizer of a unimodal `f` on `[a, b]` to interval width `tol`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn trend_data(seed: u64, log_tau2: f64) -> (StructuralModel, Vec<f64>) {
    let spec: StructuralModel = TrendSpec::new(1).unwrap().into();
    let y = simulate(&spec, &[log_tau2], 150, &mut rng(seed));
    (spec, y)
}

#[test]
fn trend_fit_matches_golden_section() {
    let init = InitialCondition::default();
    for (seed, truth) in [(1, -2.0), (2, -0.5), (3, -4.0), (4, 0.7)] {
        let (spec, y) = trend_data(seed, truth);
        let ll = |t: f64| loglik(&spec, &[t], &y, &init).unwrap().loglik;
        // coarse scan to bracket the global maximum, then refine
        let grid: Vec<f64> = (0..=160).map(|i| -12.0 + 0.1 * i as f64).collect();
        let best = grid.iter().copied().fold(grid[0], |b, t| if ll(t) > ll(b) { t } else { b });
        let oracle = golden_section(ll, best - 0.1, best + 0.1, 1e-6);
        for method in [Method::Bfgs, Method::Newton] {
            let cfg = OptimizerConfig { method, ..OptimizerConfig::default() };
            let fit = maximize(&spec, &[best + 1.0], &y, &init, &cfg).unwrap();
            assert!(fit.converged, "{method:?} seed {seed}: {:?}", fit.termination);
            let got = fit.theta_hat[0];
            assert!((got - oracle).abs() <= 1e-4, "{method:?} seed {seed}: {got} vs {oracle}");
        }
    }
}

#[test]
fn converged_fits_are_certified_local_maxima() {
    let init = InitialCondition::default();
    let mut certified = 0;
    for (name, spec) in families() {
        let y = series_for(&spec, 200, 51);
        for method in [Method::Bfgs, Method::Newton] {
            let cfg = OptimizerConfig { method, ..OptimizerConfig::default() };
            let fit = maximize(&spec, &spec.default_start(), &y, &init, &cfg).unwrap();
            if !fit.converged {
                continue;
            }
            certified += 1;
            let gmax = fit.grad_at_opt.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            assert!(gmax <= 1e-5, "{name} {method:?}: ‖∇ℓ‖∞ = {gmax:e}");
            assert!(gmax <= cfg.grad_tol);
            if method == Method::Newton {
                let top = max_eigenvalue(&fit.hessian_at_opt);
                assert!(top <= cfg.grad_tol, "{name}: eigenvalue {top:e}");
            }
        }
    }
    assert!(certified >= 10, "only {certified} of 12 fits converged");
}

#[test]
fn accepted_iterations_never_decrease_loglik() {
    let init = InitialCondition::default();
    let mut rng = rng(52);
    for (name, spec) in families() {
        let y = series_for(&spec, 120, 53);
        for _ in 0..3 {
            let theta0 = random_theta(&spec, &mut rng);
            for method in [Method::Bfgs, Method::Newton] {
                let cfg = OptimizerConfig { method, ..OptimizerConfig::default() };
                let Ok(fit) = maximize(&spec, &theta0, &y, &init, &cfg) else { continue };
                for w in fit.trace.windows(2) {
                    // steps accepted inside the flat band of ℓ may lose a little
                    let band = OptimizerConfig::default().flat_tol * w[0].loglik.abs();
                    assert!(w[1].loglik >= w[0].loglik - band, "{name} {method:?}: {} then {}", w[0].loglik, w[1].loglik);
                }
                assert!(fit.loglik >= fit.trace[0].loglik);
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_traces() {
    let init = InitialCondition::default();
    let (_, spec) = families().swap_remove(4);
    let y = series_for(&spec, 100, 54);
    let start = spec.default_start();
    let runs = multistart(&spec, &[start.clone(), start], &y, &init, &OptimizerConfig::default()).unwrap();
    let (a, b) = (runs.runs[0].as_ref().unwrap(), runs.runs[1].as_ref().unwrap());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.theta_hat, b.theta_hat);
}
