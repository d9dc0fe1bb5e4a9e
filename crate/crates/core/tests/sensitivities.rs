mod common;

use common::*;
use diffkalman_core::diff_filter::{
    innovation_curvatures, innovation_sensitivities, predict_curvatures, predict_sensitivities, update_curvatures,
    update_sensitivities, CurvatureState, SensitivityState,
};
use diffkalman_core::kalman::{predict, update, DEFAULT_KAPPA};
use diffkalman_core::linalg::Matrix;
use diffkalman_core::models::{StructuralModel, TrendSpec};
use diffkalman_core::{evaluate, fd_gradient, fd_hessian, FdConfig, InitialCondition, ModelSpec, Order};

/// Per-step filter state and its parameter derivatives.
struct Run {
    v_pred: Vec<Matrix>,
    x_filt: Vec<Vec<f64>>,
    v_filt: Vec<Matrix>,
    dv_pred: Vec<Vec<Matrix>>,
    dx_filt: Vec<Vec<Vec<f64>>>,
    dv_filt: Vec<Vec<Matrix>>,
    d2v_pred: Vec<CurvatureState>,
}

fn differential_run(spec: &StructuralModel, theta: &[f64], y: &[f64]) -> Run {
    let (sm, db) = spec.build(theta).unwrap();
    let p = spec.param_count();
    let m = spec.state_dim();
    let mut x = vec![0.0; m];
    let mut v = Matrix::identity(m).scaled(DEFAULT_KAPPA);
    let mut sens = SensitivityState::zeros(p, m);
    let mut curv = CurvatureState::zeros(p, m);
    let mut run = Run {
        v_pred: vec![],
        x_filt: vec![],
        v_filt: vec![],
        dv_pred: vec![],
        dx_filt: vec![],
        dv_filt: vec![],
        d2v_pred: vec![],
    };
    for &obs in y {
        let (xp, vp) = predict(&x, &v, &sm).unwrap();
        let sp = predict_sensitivities(&sens, &x, &v, &sm, &db).unwrap();
        let cp = predict_curvatures(&curv, &sens, &x, &v, &sm, &db).unwrap();
        let step = update(xp, vp, obs, &sm).unwrap();
        let (deps, dr) = innovation_sensitivities(&sp, &step.x_pred, &step.v_pred, &sm, &db).unwrap();
        let (d2eps, d2r) = innovation_curvatures(&cp, &sp, &step.x_pred, &step.v_pred, &sm, &db).unwrap();
        let (sf, gain) = update_sensitivities(&sp, &step, &deps, &dr, &sm, &db).unwrap();
        curv = update_curvatures(&cp, &sp, &gain, &step, &deps, &dr, &d2eps, &d2r, &sm, &db).unwrap();
        run.v_pred.push(step.v_pred.clone());
        run.dv_pred.push(sp.dv.clone());
        run.d2v_pred.push(cp);
        run.x_filt.push(step.x_filt.clone());
        run.v_filt.push(step.v_filt.clone());
        run.dx_filt.push(sf.dx.clone());
        run.dv_filt.push(sf.dv.clone());
        x = step.x_filt;
        v = step.v_filt;
        sens = sf;
    }
    run
}

fn plain_run(spec: &StructuralModel, theta: &[f64], y: &[f64]) -> Run {
    let sm = spec.realize(theta).unwrap();
    let m = spec.state_dim();
    let mut x = vec![0.0; m];
    let mut v = Matrix::identity(m).scaled(DEFAULT_KAPPA);
    let mut run = Run {
        v_pred: vec![],
        x_filt: vec![],
        v_filt: vec![],
        dv_pred: vec![],
        dx_filt: vec![],
        dv_filt: vec![],
        d2v_pred: vec![],
    };
    for &obs in y {
        let (xp, vp) = predict(&x, &v, &sm).unwrap();
        let step = update(xp, vp, obs, &sm).unwrap();
        run.v_pred.push(step.v_pred.clone());
        run.x_filt.push(step.x_filt.clone());
        run.v_filt.push(step.v_filt.clone());
        x = step.x_filt;
        v = step.v_filt;
    }
    run
}

/// Roundoff level of a difference quotient of quantities of size `scale`
/// with step product `denom`.
fn noise_floor(scale: f64, denom: f64) -> f64 {
    64.0 * f64::EPSILON * scale / denom
}

/// Largest covariance entry seen up to step `n`; absolute roundoff made
/// while the covariance was large persists after it shrinks.
fn run_scale(runs: &[&Run], n: usize) -> f64 {
    runs.iter()
        .flat_map(|r| (0..=n).map(move |t| r.v_pred[t].max_abs().max(r.v_filt[t].max_abs())))
        .fold(1.0, f64::max)
}

fn fd_matrix(plus: &Matrix, minus: &Matrix, h: f64) -> Matrix {
    lincomb(&[(0.5 / h, plus), (-0.5 / h, minus)])
}

#[test]
fn one_predict_step_matches_differences() {
    let mut rng = rng(21);
    for (name, spec) in families() {
        let m = spec.state_dim();
        let p = spec.param_count();
        // an arbitrary, θ-independent filtered state
        let x: Vec<f64> = (0..m).map(|i| 0.3 * i as f64 - 1.0).collect();
        let mut v = Matrix::identity(m);
        for i in 0..m {
            for j in 0..m {
                v[(i, j)] += 0.5f64.powi((i as i32 - j as i32).abs() + 1);
            }
        }
        for _ in 0..5 {
            let theta = random_theta(&spec, &mut rng);
            let (sm, db) = spec.build(&theta).unwrap();
            let sp = predict_sensitivities(&SensitivityState::zeros(p, m), &x, &v, &sm, &db).unwrap();
            for i in 0..p {
                let h = 1e-5 * theta[i].abs().max(1.0);
                let (xa, va) = predict(&x, &v, &spec.realize(&with(&theta, i, h)).unwrap()).unwrap();
                let (xb, vb) = predict(&x, &v, &spec.realize(&with(&theta, i, -h)).unwrap()).unwrap();
                let fd_v = fd_matrix(&va, &vb, h);
                let fd_x: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                let bad = worst_violation(sp.dv[i].as_slice(), fd_v.as_slice(), 1e-6, 1e-10);
                assert!(bad.is_none(), "{name} dV_pred[{i}] {bad:?}");
                let bad = worst_violation(&sp.dx[i], &fd_x, 1e-6, 1e-10);
                assert!(bad.is_none(), "{name} dx_pred[{i}] {bad:?}");
            }
        }
    }
}

#[test]
fn full_run_first_order_state_sensitivities() {
    let mut rng = rng(22);
    for (name, spec) in families() {
        let y = series_for(&spec, 50, 7);
        for _ in 0..3 {
            let theta = random_theta(&spec, &mut rng);
            let run = differential_run(&spec, &theta, &y);
            for i in 0..spec.param_count() {
                let h = 1e-5 * theta[i].abs().max(1.0);
                let a = plain_run(&spec, &with(&theta, i, h), &y);
                let b = plain_run(&spec, &with(&theta, i, -h), &y);
                for n in 0..y.len() {
                    let abs = noise_floor(run_scale(&[&a, &b], n), h);
                    let fd_v = fd_matrix(&a.v_filt[n], &b.v_filt[n], h);
                    let bad = normwise_violation(run.dv_filt[n][i].as_slice(), fd_v.as_slice(), 1e-5, abs);
                    assert!(bad.is_none(), "{name} θ={theta:?} dV_filt n={n} i={i} {bad:?}");
                    let fd_x: Vec<f64> = a.x_filt[n].iter().zip(&b.x_filt[n]).map(|(p, q)| (p - q) / (2.0 * h)).collect();
                    let bad = normwise_violation(&run.dx_filt[n][i], &fd_x, 1e-5, abs);
                    assert!(bad.is_none(), "{name} θ={theta:?} dx_filt n={n} i={i} {bad:?}");
                }
            }
        }
    }
}

#[test]
fn full_run_second_order_covariance() {
    let mut rng = rng(23);
    for (name, spec) in families() {
        let y = series_for(&spec, 50, 8);
        let theta = random_theta(&spec, &mut rng);
        let run = differential_run(&spec, &theta, &y);
        let p = spec.param_count();
        for i in 0..p {
            for j in i..p {
                let hi = 3e-4 * theta[i].abs().max(1.0);
                let hj = 3e-4 * theta[j].abs().max(1.0);
                let pp = plain_run(&spec, &with2(&theta, i, hi, j, hj), &y);
                let pm = plain_run(&spec, &with2(&theta, i, hi, j, -hj), &y);
                let mp = plain_run(&spec, &with2(&theta, i, -hi, j, hj), &y);
                let mm = plain_run(&spec, &with2(&theta, i, -hi, j, -hj), &y);
                // differences of the analytic first derivatives, with a
                // finer step since no second difference is involved
                let gj = 1e-4 * theta[j].abs().max(1.0);
                let dp = differential_run(&spec, &with(&theta, j, gj), &y);
                let dm = differential_run(&spec, &with(&theta, j, -gj), &y);
                let s = 0.25 / (hi * hj);
                // on the diagonal the corner stencil collapses to steps of 2h
                let diag = (i == j).then(|| {
                    (
                        plain_run(&spec, &with(&theta, i, hi), &y),
                        plain_run(&spec, &theta, &y),
                        plain_run(&spec, &with(&theta, i, -hi), &y),
                    )
                });
                for n in 1..y.len() {
                    let analytic = run.d2v_pred[n].d2v(i, j);
                    let fd = if let Some((a, c, b)) = &diag {
                        let q = 1.0 / (hi * hi);
                        lincomb(&[(q, &a.v_pred[n]), (-2.0 * q, &c.v_pred[n]), (q, &b.v_pred[n])])
                    } else {
                        lincomb(&[(s, &pp.v_pred[n]), (-s, &pm.v_pred[n]), (-s, &mp.v_pred[n]), (s, &mm.v_pred[n])])
                    };
                    let abs = noise_floor(run_scale(&[&pp, &pm, &mp, &mm], n), hi * hj);
                    let bad = normwise_violation(analytic.as_slice(), fd.as_slice(), 1e-4, abs);
                    assert!(bad.is_none(), "{name} d2V_pred n={n} ({i},{j}) {bad:?}");
                    let fd1 = fd_matrix(&dp.dv_pred[n][i], &dm.dv_pred[n][i], gj);
                    let scale = (0..=n)
                        .map(|t| dp.dv_pred[t][i].max_abs().max(dm.dv_pred[t][i].max_abs()))
                        .fold(run_scale(&[&dp, &dm], n), f64::max);
                    let bad = normwise_violation(analytic.as_slice(), fd1.as_slice(), 1e-4, noise_floor(scale, gj));
                    assert!(bad.is_none(), "{name} d(dV_pred) n={n} ({i},{j}) {bad:?}");
                }
            }
        }
    }
}

#[test]
fn gradient_and_hessian_match_differences() {
    let mut rng = rng(24);
    let init = InitialCondition::default();
    let cfg = FdConfig::default();
    for (name, spec) in families() {
        let y = series_for(&spec, 100, 9);
        for _ in 0..5 {
            let theta = random_theta(&spec, &mut rng);
            let rep = evaluate(&spec, &theta, &y, &init, Order::Hessian).unwrap();
            let grad = rep.grad.unwrap();
            let fd = fd_gradient(&spec, &theta, &y, &init, &cfg).unwrap();
            let bad = worst_violation(&grad, &fd, 1e-4, 1e-6);
            assert!(bad.is_none(), "{name} θ={theta:?} grad {bad:?}");
            let hess = rep.hessian.unwrap();
            assert_eq!(hess.asymmetry(), 0.0);
            let fdh = fd_hessian(&spec, &theta, &y, &init, &cfg).unwrap();
            let bad = worst_violation(hess.as_slice(), fdh.as_slice(), 1e-5, 1e-6);
            assert!(bad.is_none(), "{name} θ={theta:?} hessian {bad:?}");
        }
    }
}

#[test]
fn scalar_trend_hessian_to_six_digits() {
    let spec: StructuralModel = TrendSpec::new(1).unwrap().into();
    let y = series_for(&spec, 100, 10);
    let init = InitialCondition::default();
    for theta in [-4.0, -1.5, 0.0, 0.8] {
        let rep = evaluate(&spec, &[theta], &y, &init, Order::Hessian).unwrap();
        let hess = rep.hessian.unwrap();
        assert_eq!(hess.shape(), (1, 1));
        let fdh = fd_hessian(&spec, &[theta], &y, &init, &FdConfig::default()).unwrap();
        let e = rel_err(hess[(0, 0)], fdh[(0, 0)], 1e-8);
        assert!(e <= 1e-6, "θ={theta} {} vs {} ({e:e})", hess[(0, 0)], fdh[(0, 0)]);
    }
}

#[test]
fn gradient_order_skips_second_derivatives() {
    let spec: StructuralModel = TrendSpec::new(2).unwrap().into();
    let y = series_for(&spec, 30, 3);
    let rep = evaluate(&spec, &[-1.0], &y, &InitialCondition::default(), Order::Gradient).unwrap();
    assert!(rep.grad.is_some());
    assert!(rep.hessian.is_none() && rep.d2sigma2.is_none());
    let rep = evaluate(&spec, &[-1.0], &y, &InitialCondition::default(), Order::Value).unwrap();
    assert!(rep.grad.is_none());
}
