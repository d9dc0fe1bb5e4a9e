//! Maps from unconstrained working parameters to natural parameters.

use crate::error::{Error, Result};
use crate::math;

/// `τ² = e^θ` with its first and second derivatives (both `e^θ`).
pub fn log_variance_transform(theta: f64) -> Result<(f64, f64, f64)> {
    let q = math::exp(theta);
    if !q.is_finite() || !theta.is_finite() {
        return Err(Error::Overflow { theta });
    }
    Ok((q, q, q))
}

/// Inverse of [`log_variance_transform`].
pub fn log_variance_inverse(tau2: f64) -> Result<f64> {
    if !(tau2 > 0.0) || !tau2.is_finite() {
        return Err(Error::InvalidConfig(alloc::format!("variance must be positive and finite, got {tau2}")));
    }
    Ok(math::ln(tau2))
}

/// `β = C (e^θ − 1)/(e^θ + 1)` with `dβ/dθ` and `d²β/dθ²`.
///
/// Evaluated through the logistic `s = 1/(1 + e^{-θ})`, where
/// `β = C(2s − 1)`, `dβ/dθ = 2C s(1 − s)` and
/// `d²β/dθ² = 2C s(1 − s)(1 − 2s)`, which stays finite for any `θ`.
pub fn parcor_transform(theta: f64, bound: f64) -> (f64, f64, f64) {
    let s = if theta >= 0.0 {
        1.0 / (1.0 + math::exp(-theta))
    } else {
        let e = math::exp(theta);
        e / (1.0 + e)
    };
    let beta = bound * libm::tanh(0.5 * theta);
    let first = 2.0 * bound * s * (1.0 - s);
    let second = first * (1.0 - 2.0 * s);
    (beta, first, second)
}

/// Inverse of [`parcor_transform`]: `θ = log((C + β)/(C − β))`.
pub fn parcor_inverse(beta: f64, bound: f64) -> Result<f64> {
    if !(math::abs(beta) < bound) {
        return Err(Error::InvalidConfig(alloc::format!("partial autocorrelation {beta} outside (-{bound}, {bound})")));
    }
    Ok(math::ln((bound + beta) / (bound - beta)))
}
