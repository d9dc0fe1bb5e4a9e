//! Synthetic series from a state-space model.

use diffkalman_core::linalg::cholesky;
use diffkalman_core::{InitialCondition, Matrix, ModelSpec, SystemMatrices};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Observation noise variance σ².
    pub obs_var: f64,
    /// Initial state. When `None` it is drawn from `N(0, σ² κ I)`, the
    /// prior the likelihood assumes, with `κ = init_var`.
    pub x0: Option<Vec<f64>>,
    pub init_var: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            obs_var: 1.0,
            x0: None,
            init_var: InitialCondition::default().kappa,
        }
    }
}

/// Draws `n` observations from the model at `theta`. System noise has
/// covariance `σ² Q(θ)`, so the simulated series matches the concentrated
/// likelihood's scaling.
pub fn simulate<M: ModelSpec + ?Sized>(spec: &M, theta: &[f64], n: usize, seed: u64, opts: &SimOptions) -> Result<Vec<f64>> {
    spec.check_theta(theta)?;
    simulate_system(&spec.realize(theta)?, n, seed, opts)
}

pub fn simulate_system(sm: &SystemMatrices, n: usize, seed: u64, opts: &SimOptions) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 observations, got {n}")));
    }
    if !opts.obs_var.is_finite() || opts.obs_var < 0.0 {
        return Err(Error::Argument(format!("observation variance must be non-negative, got {}", opts.obs_var)));
    }
    if !opts.init_var.is_finite() || opts.init_var < 0.0 {
        return Err(Error::Argument(format!("initial state variance must be non-negative, got {}", opts.init_var)));
    }
    let m = sm.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match &opts.x0 {
        Some(x0) if x0.len() != m => {
            return Err(Error::Argument(format!("initial state has {} entries, model needs {m}", x0.len())));
        }
        Some(x0) => x0.clone(),
        None => {
            let sd0 = (opts.obs_var * opts.init_var).sqrt();
            (0..m)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd0 * z
                })
                .collect()
        }
    };
    let mut q = sm.q.clone();
    q.scale(opts.obs_var);
    let factor = noise_factor(&q)?;
    let sd = opts.obs_var.sqrt();
    let k = sm.noise_dim();

    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = factor.mul_vec(&z);
        let mut next = sm.f.mul_vec(&x);
        for (a, b) in next.iter_mut().zip(sm.g.mul_vec(&v)) {
            *a += b;
        }
        x = next;
        let w: f64 = StandardNormal.sample(&mut rng);
        y.push(sm.h.mul_vec(&x)[0] + sd * w);
    }
    Ok(y)
}

/// `L` with `L Lᵀ = Q`. Diagonal `Q` may have zero entries.
fn noise_factor(q: &Matrix) -> Result<Matrix> {
    let k = q.rows();
    let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || q[(i, j)] == 0.0));
    if diagonal {
        let d: Vec<f64> = (0..k).map(|i| q[(i, i)].max(0.0).sqrt()).collect();
        return Ok(Matrix::from_diagonal(&d));
    }
    cholesky(q).ok_or_else(|| Error::Argument("system noise covariance is not positive definite".into()))
}
