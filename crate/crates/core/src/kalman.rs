//! Kalman filter with unit observation variance and the concentrated
//! log-likelihood.
//!
//! With `R = 1` the innovation variance is `r_n = H V_{n|n-1} Hᵀ + 1 ≥ 1`,
//! the observation scale is profiled out as
//! `σ̂² = (1/N) Σ ε_n²/r_n`, and
//!
//! ```text
//! ℓ(θ) = -½ (N log 2πσ̂² + Σ log r_n + N).
//! ```

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::math;
use crate::model::{ModelSpec, SystemMatrices};

/// Smallest admissible `σ̂²`; anything below makes `log σ̂²` meaningless.
pub const SIGMA2_FLOOR: f64 = 1e-300;

/// Default prior variance scale `κ` in `V_{0|0} = κ I`.
pub const DEFAULT_KAPPA: f64 = 1e4;

/// Prior for the state before the first observation.
///
/// The mean defaults to zero and the covariance to `κ I`. Neither depends
/// on `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub mean: Option<Vec<f64>>,
    pub kappa: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            mean: None,
            kappa: DEFAULT_KAPPA,
        }
    }
}

impl InitialCondition {
    pub fn with_kappa(kappa: f64) -> Self {
        Self { mean: None, kappa }
    }

    pub(crate) fn materialize(&self, m: usize) -> Result<(Vec<f64>, Matrix)> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidConfig("initial variance scale must be finite and >= 0".into()));
        }
        let x0 = match &self.mean {
            Some(mean) if mean.len() != m => {
                return Err(Error::mismatch("initial mean", (m, 1), (mean.len(), 1)));
            }
            Some(mean) => mean.clone(),
            None => alloc::vec![0.0; m],
        };
        Ok((x0, Matrix::identity(m).scaled(self.kappa)))
    }
}

/// Quantities produced at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub x_pred: Vec<f64>,
    pub v_pred: Matrix,
    pub gain: Vec<f64>,
    pub eps: f64,
    pub r: f64,
    pub x_filt: Vec<f64>,
    pub v_filt: Matrix,
}

/// `ℓ`, `σ̂²` and the innovation traces they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSummary {
    pub loglik: f64,
    pub sigma2: f64,
    pub n_obs: usize,
    pub eps_trace: Vec<f64>,
    pub r_trace: Vec<f64>,
}

fn check_state(x: &[f64], v: &Matrix, sm: &SystemMatrices) -> Result<()> {
    let m = sm.state_dim();
    if x.len() != m {
        return Err(Error::mismatch("state", (m, 1), (x.len(), 1)));
    }
    if v.shape() != (m, m) {
        return Err(Error::mismatch("state covariance", (m, m), v.shape()));
    }
    Ok(())
}

/// One-step-ahead prediction: `x⁻ = F x`, `V⁻ = F V Fᵀ + G Q Gᵀ`.
pub fn predict(x_filt_prev: &[f64], v_filt_prev: &Matrix, sm: &SystemMatrices) -> Result<(Vec<f64>, Matrix)> {
    check_state(x_filt_prev, v_filt_prev, sm)?;
    let x_pred = sm.f.mul_vec(x_filt_prev);
    let mut v_pred = sm.f.congruence(v_filt_prev);
    v_pred.add_assign(&sm.g.congruence(&sm.q));
    v_pred.symmetrize();
    Ok((x_pred, v_pred))
}

/// Measurement update for a scalar observation with `R = 1`.
pub fn update(x_pred: Vec<f64>, v_pred: Matrix, y: f64, sm: &SystemMatrices) -> Result<FilterStep> {
    update_at(x_pred, v_pred, y, sm, 0)
}

pub(crate) fn update_at(x_pred: Vec<f64>, v_pred: Matrix, y: f64, sm: &SystemMatrices, n: usize) -> Result<FilterStep> {
    check_state(&x_pred, &v_pred, sm)?;
    if !y.is_finite() || x_pred.iter().any(|v| !v.is_finite()) || !v_pred.is_finite() {
        return Err(Error::NonFiniteInput { n });
    }
    let h = sm.h.row(0);
    // H V, which equals (V Hᵀ)ᵀ for symmetric V
    let hv = sm.h.mul(&v_pred);
    let hv = hv.row(0);
    let r = dot(hv, h) + sm.r;
    let eps = y - dot(h, &x_pred);
    let gain: Vec<f64> = hv.iter().map(|v| v / r).collect();
    let mut x_filt = x_pred.clone();
    crate::linalg::axpy(eps, &gain, &mut x_filt);
    let mut v_filt = v_pred.clone();
    v_filt.add_outer(-1.0, &gain, hv);
    v_filt.symmetrize();
    Ok(FilterStep {
        x_pred,
        v_pred,
        gain,
        eps,
        r,
        x_filt,
        v_filt,
    })
}

/// `ℓ` and `σ̂²` from innovation traces.
pub fn concentrated_loglik(eps_trace: Vec<f64>, r_trace: Vec<f64>) -> Result<LikelihoodSummary> {
    if eps_trace.is_empty() {
        return Err(Error::Empty("innovation trace"));
    }
    if eps_trace.len() != r_trace.len() {
        return Err(Error::mismatch("variance trace", (eps_trace.len(), 1), (r_trace.len(), 1)));
    }
    if let Some(n) = r_trace.iter().position(|&r| !(r >= 1.0) || !r.is_finite()) {
        return Err(Error::InvariantViolation(alloc::format!("r_n >= 1 at step {n}")));
    }
    let n_obs = eps_trace.len();
    let n = n_obs as f64;
    let weighted: f64 = eps_trace.iter().zip(&r_trace).map(|(e, r)| e * e / r).sum();
    let sigma2 = weighted / n;
    if !(sigma2 >= SIGMA2_FLOOR) {
        return Err(Error::DegenerateLikelihood { sigma2 });
    }
    let log_r: f64 = r_trace.iter().map(|&r| math::ln(r)).sum();
    let loglik = -0.5 * (n * math::ln(math::TWO_PI * sigma2) + log_r + n);
    if !loglik.is_finite() {
        return Err(Error::NonFiniteObjective {
            context: alloc::format!("log-likelihood with sigma2 = {sigma2:e}"),
        });
    }
    Ok(LikelihoodSummary {
        loglik,
        sigma2,
        n_obs,
        eps_trace,
        r_trace,
    })
}

fn check_series(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("series"));
    }
    if let Some(n) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { n });
    }
    Ok(())
}

/// Filters `y` through `sm` from `init`. `visit` sees each step together
/// with the filtered state `(x_{n-1|n-1}, V_{n-1|n-1})` it was predicted
/// from.
pub(crate) fn filter_with<V>(sm: &SystemMatrices, y: &[f64], init: &InitialCondition, mut visit: V) -> Result<LikelihoodSummary>
where
    V: FnMut(usize, &[f64], &Matrix, &FilterStep) -> Result<()>,
{
    check_series(y)?;
    let (mut x, mut v) = init.materialize(sm.state_dim())?;
    let mut eps_trace = Vec::with_capacity(y.len());
    let mut r_trace = Vec::with_capacity(y.len());
    for (n, &obs) in y.iter().enumerate() {
        let (x_pred, v_pred) = predict(&x, &v, sm)?;
        if x_pred.iter().any(|v| !v.is_finite()) || !v_pred.is_finite() {
            return Err(Error::NonFiniteState { n });
        }
        let step = update_at(x_pred, v_pred, obs, sm, n)?;
        if !step.eps.is_finite() || !step.r.is_finite() || !step.v_filt.is_finite() || step.x_filt.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { n });
        }
        eps_trace.push(step.eps);
        r_trace.push(step.r);
        visit(n, &x, &v, &step)?;
        x = step.x_filt;
        v = step.v_filt;
    }
    concentrated_loglik(eps_trace, r_trace)
}

/// Runs the filter over the whole series and returns every step.
pub fn run_filter<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
) -> Result<(Vec<FilterStep>, LikelihoodSummary)> {
    spec.check_theta(theta)?;
    let sm = spec.realize(theta)?;
    let mut steps = Vec::with_capacity(y.len());
    let summary = filter_with(&sm, y, init, |_, _, _, s| {
        steps.push(s.clone());
        Ok(())
    })?;
    Ok((steps, summary))
}

/// Log-likelihood only, without retaining steps.
pub fn loglik<M: ModelSpec + ?Sized>(spec: &M, theta: &[f64], y: &[f64], init: &InitialCondition) -> Result<LikelihoodSummary> {
    spec.check_theta(theta)?;
    let sm = spec.realize(theta)?;
    filter_with(&sm, y, init, |_, _, _, _| Ok(()))
}
