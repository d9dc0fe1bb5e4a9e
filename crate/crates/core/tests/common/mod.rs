#![allow(dead_code)]

use diffkalman_core::linalg::Matrix;
use diffkalman_core::models::{SeasonalArSpec, SeasonalSpec, StructuralModel, TrendSpec};
use diffkalman_core::ModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// The model families exercised by the oracle suites.
pub fn families() -> Vec<(&'static str, StructuralModel)> {
    vec![
        ("trend k=1", TrendSpec::new(1).unwrap().into()),
        ("trend k=2", TrendSpec::new(2).unwrap().into()),
        ("seasonal 12", SeasonalSpec::new(12).unwrap().into()),
        ("seasonal-ar m=1", SeasonalArSpec::new(12, 1, 1.0).unwrap().into()),
        ("seasonal-ar m=2", SeasonalArSpec::new(12, 2, 1.0).unwrap().into()),
        ("seasonal-ar m=3", SeasonalArSpec::new(12, 3, 1.0).unwrap().into()),
    ]
}

/// Small-period variants, cheap enough for property tests.
pub fn small_families() -> Vec<StructuralModel> {
    vec![
        TrendSpec::new(1).unwrap().into(),
        TrendSpec::new(2).unwrap().into(),
        SeasonalSpec::new(4).unwrap().into(),
        SeasonalArSpec::new(4, 2, 1.0).unwrap().into(),
        SeasonalArSpec::new(3, 3, 0.9).unwrap().into(),
    ]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random admissible `θ`: log variances in `[-5, 1]`, PARCOR parameters in
/// `[-2, 2]`.
pub fn random_theta<R: Rng>(spec: &StructuralModel, rng: &mut R) -> Vec<f64> {
    let k = spec.noise_dim();
    (0..spec.param_count())
        .map(|i| if i < k { rng.random_range(-5.0..1.0) } else { rng.random_range(-2.0..2.0) })
        .collect()
}

/// Draws a series of length `n` from the model at `theta` with unit
/// observation noise, starting from a zero state.
pub fn simulate<M: ModelSpec + ?Sized, R: Rng>(spec: &M, theta: &[f64], n: usize, rng: &mut R) -> Vec<f64> {
    let sm = spec.realize(theta).unwrap();
    let m = sm.state_dim();
    let k = sm.noise_dim();
    let sd: Vec<f64> = (0..k).map(|i| sm.q[(i, i)].sqrt()).collect();
    let mut x = vec![0.0; m];
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let v: Vec<f64> = sd
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect();
        let mut next = sm.f.mul_vec(&x);
        let gv = sm.g.mul_vec(&v);
        for (a, b) in next.iter_mut().zip(&gv) {
            *a += b;
        }
        x = next;
        let w: f64 = StandardNormal.sample(rng);
        y.push(sm.h.mul_vec(&x)[0] + w);
    }
    y
}

/// Series for the oracle suites: simulated at a fixed moderate `θ` so the
/// data are the same for every evaluation point.
pub fn series_for(spec: &StructuralModel, n: usize, seed: u64) -> Vec<f64> {
    let k = spec.noise_dim();
    let theta: Vec<f64> = (0..spec.param_count())
        .map(|i| if i < k { -2.0 } else { 0.6 })
        .collect();
    simulate(spec, &theta, n, &mut rng(seed))
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest entrywise relative error between two matrices, with entries
/// below `1e-8` of the larger matrix's scale compared absolutely against
/// that scale.
pub fn matrix_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a.max_abs().max(b.max_abs());
    let floor = (scale * 1e-8).max(1e-300);
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| rel_err(*x, *y, floor))
        .fold(0.0, f64::max)
}

/// Worst entry failing both `rel` and `abs`, as `(index, analytic, numeric)`.
pub fn worst_violation(a: &[f64], b: &[f64], rel: f64, abs: f64) -> Option<(usize, f64, f64)> {
    assert_eq!(a.len(), b.len());
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for (k, (&x, &y)) in a.iter().zip(b).enumerate() {
        let e = rel_err(x, y, 1e-300);
        if e > rel && (x - y).abs() > abs && worst.is_none_or(|w| e > w.3) {
            worst = Some((k, x, y, e));
        }
    }
    worst.map(|w| (w.0, w.1, w.2))
}

/// Norm-wise check `max|a − b| ≤ rel · max(max|a|, max|b|) + abs`; on
/// failure returns the entry with the largest difference.
pub fn normwise_violation(a: &[f64], b: &[f64], rel: f64, abs: f64) -> Option<(usize, f64, f64)> {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let (k, d) = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold((0, 0.0f64), |acc, (k, d)| if d > acc.1 { (k, d) } else { acc });
    (d > rel * scale + abs).then(|| (k, a[k], b[k]))
}

pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * 1e-8).max(1e-300);
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y, floor)).fold(0.0, f64::max)
}

pub fn with(theta: &[f64], i: usize, d: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    t[i] += d;
    t
}

pub fn with2(theta: &[f64], i: usize, di: f64, j: usize, dj: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    t[i] += di;
    t[j] += dj;
    t
}

pub fn lincomb(terms: &[(f64, &Matrix)]) -> Matrix {
    let (r, c) = terms[0].1.shape();
    let mut out = Matrix::zeros(r, c);
    for (a, m) in terms {
        out.add_scaled(*a, m);
    }
    out
}
