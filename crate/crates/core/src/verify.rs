//! Finite-difference checks of the analytic derivatives.
//!
//! The gradient check differences `ℓ` itself; the Hessian check differences
//! the analytic gradient, with plain second differences of `ℓ` available as
//! an independent path. Steps are `Δθ_j = max(rel_step·|θ_j|, min_step)`.
//!
//! Second differences of `ℓ` divide its evaluation noise by `h²`. With a
//! diffuse start that noise is roughly `ε·κ·|ℓ|`, so they use a larger step
//! of their own, [`CompareOptions::value_step`].

use alloc::format;
use alloc::vec::Vec;

use crate::diff_filter::{evaluate, DerivativeReport, Order};
use crate::error::{Error, Result};
use crate::kalman::InitialCondition;
use crate::linalg::Matrix;
use crate::math;
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FdConfig {
    pub rel_step: f64,
    pub min_step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            rel_step: 1e-4,
            min_step: 1e-4,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_step > 0.0) || !(self.min_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "finite-difference steps must be positive, got rel_step = {}, min_step = {}",
                self.rel_step, self.min_step
            )));
        }
        Ok(())
    }

    pub fn step(&self, theta_j: f64) -> f64 {
        (self.rel_step * math::abs(theta_j)).max(self.min_step)
    }
}

/// Relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    math::abs(a - b) / math::abs(a).max(math::abs(b)).max(1e-8)
}

fn shifted(theta: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut t = theta.to_vec();
    for &(j, d) in moves {
        t[j] += d;
    }
    t
}

fn stencil_error(j: usize, sign: char, err: Option<Error>) -> Error {
    let context = match err {
        Some(e) => format!("stencil point theta[{j}] {sign} h ({e})"),
        None => format!("stencil point theta[{j}] {sign} h"),
    };
    Error::NonFiniteObjective { context }
}

fn finite_value<F>(f: &mut F, t: &[f64], j: usize, sign: char) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    match f(t) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(stencil_error(j, sign, None)),
        Err(e) => Err(stencil_error(j, sign, Some(e))),
    }
}

/// Central-difference gradient of a scalar function; `2p` calls.
pub fn central_gradient<F>(mut f: F, theta: &[f64], cfg: &FdConfig) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let h = cfg.step(theta[j]);
        let plus = finite_value(&mut f, &shifted(theta, &[(j, h)]), j, '+')?;
        let minus = finite_value(&mut f, &shifted(theta, &[(j, -h)]), j, '-')?;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Jacobian of a gradient, symmetrized; `2p` calls.
pub fn central_jacobian<F>(mut g: F, theta: &[f64], cfg: &FdConfig) -> Result<Matrix>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let p = theta.len();
    let mut out = Matrix::zeros(p, p);
    for j in 0..p {
        let h = cfg.step(theta[j]);
        let mut call = |t: Vec<f64>, sign: char| -> Result<Vec<f64>> {
            let v = g(&t).map_err(|e| stencil_error(j, sign, Some(e)))?;
            if v.len() != p {
                return Err(Error::mismatch("gradient", (p, 1), (v.len(), 1)));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(stencil_error(j, sign, None));
            }
            Ok(v)
        };
        let plus = call(shifted(theta, &[(j, h)]), '+')?;
        let minus = call(shifted(theta, &[(j, -h)]), '-')?;
        for i in 0..p {
            out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    out.symmetrize();
    Ok(out)
}

/// Second differences of a scalar function:
///
/// ```text
/// H_jj = (f(θ+h_j) − 2f(θ) + f(θ−h_j)) / h_j²
/// H_ij = (f(++) − f(+−) − f(−+) + f(−−)) / (4 h_i h_j)
/// ```
pub fn second_differences<F>(mut f: F, theta: &[f64], cfg: &FdConfig) -> Result<Matrix>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let p = theta.len();
    let f0 = match f(theta) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => return Err(Error::NonFiniteObjective { context: "base point".into() }),
        Err(e) => {
            return Err(Error::NonFiniteObjective {
                context: format!("base point ({e})"),
            })
        }
    };
    let steps: Vec<f64> = theta.iter().map(|&t| cfg.step(t)).collect();
    let mut out = Matrix::zeros(p, p);
    for j in 0..p {
        let h = steps[j];
        let plus = finite_value(&mut f, &shifted(theta, &[(j, h)]), j, '+')?;
        let minus = finite_value(&mut f, &shifted(theta, &[(j, -h)]), j, '-')?;
        out[(j, j)] = (plus - 2.0 * f0 + minus) / (h * h);
        for i in 0..j {
            let hi = steps[i];
            let mut corner = |si: f64, sj: f64| finite_value(&mut f, &shifted(theta, &[(i, si * hi), (j, sj * h)]), j, '±');
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?) / (4.0 * hi * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn loglik_at<'a, M: ModelSpec + ?Sized>(
    spec: &'a M,
    y: &'a [f64],
    init: &'a InitialCondition,
) -> impl Fn(&[f64]) -> Result<f64> + 'a {
    move |t| Ok(evaluate(spec, t, y, init, Order::Value)?.loglik)
}

/// Central-difference `∇ℓ`; exactly `2p` filter runs.
pub fn fd_gradient<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    cfg: &FdConfig,
) -> Result<Vec<f64>> {
    spec.check_theta(theta)?;
    central_gradient(loglik_at(spec, y, init), theta, cfg)
}

/// Central differences of the analytic gradient, symmetrized; `2p`
/// gradient evaluations.
pub fn fd_hessian<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    cfg: &FdConfig,
) -> Result<Matrix> {
    spec.check_theta(theta)?;
    central_jacobian(
        |t| {
            evaluate(spec, t, y, init, Order::Gradient)?
                .grad
                .ok_or_else(|| Error::InvariantViolation("gradient requested".into()))
        },
        theta,
        cfg,
    )
}

/// Second differences of `ℓ` alone, independent of the derivative
/// recursions.
pub fn fd_hessian_from_values<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    cfg: &FdConfig,
) -> Result<Matrix> {
    spec.check_theta(theta)?;
    second_differences(loglik_at(spec, y, init), theta, cfg)
}

/// One compared quantity. `j` is `None` for gradient entries.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Entry {
    pub i: usize,
    pub j: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl Entry {
    fn new(i: usize, j: Option<usize>, analytic: f64, numeric: f64) -> Self {
        Self {
            i,
            j,
            analytic,
            numeric,
            rel_err: rel_error(analytic, numeric),
        }
    }

    pub fn abs_err(&self) -> f64 {
        math::abs(self.analytic - self.numeric)
    }

    /// Passes when either the relative or the absolute error is within
    /// bounds.
    pub fn within(&self, rel: f64, abs: f64) -> bool {
        self.rel_err <= rel || self.abs_err() <= abs
    }
}

/// Acceptance bounds for [`ComparisonReport::failures`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerances {
    pub grad_rel: f64,
    pub grad_abs: f64,
    pub hess_rel: f64,
    pub hess_abs: f64,
    pub hess_values_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            grad_rel: 1e-4,
            grad_abs: 1e-6,
            hess_rel: 1e-5,
            hess_abs: 1e-6,
            hess_values_rel: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    /// Also compute second differences of `ℓ`.
    pub value_hessian: bool,
    /// Relative step for those differences, `value_step·max(|θ_j|, 1)`.
    pub value_step: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            value_hessian: false,
            value_step: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonReport {
    pub analytic: DerivativeReport,
    pub numeric_grad: Vec<f64>,
    pub numeric_hessian: Matrix,
    pub value_hessian: Option<Matrix>,
    pub grad_entries: Vec<Entry>,
    pub hess_entries: Vec<Entry>,
    pub value_hess_entries: Vec<Entry>,
    pub max_rel_err_grad: f64,
    pub max_rel_err_hess: f64,
    pub max_rel_err_value_hess: Option<f64>,
}

/// Which comparison an offending entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Check {
    Gradient,
    Hessian,
    ValueHessian,
}

impl ComparisonReport {
    /// Entries outside `tol`, tagged by comparison.
    pub fn failures(&self, tol: &Tolerances) -> Vec<(Check, Entry)> {
        let mut out = Vec::new();
        out.extend(self.grad_entries.iter().filter(|e| !e.within(tol.grad_rel, tol.grad_abs)).map(|e| (Check::Gradient, *e)));
        out.extend(self.hess_entries.iter().filter(|e| !e.within(tol.hess_rel, tol.hess_abs)).map(|e| (Check::Hessian, *e)));
        out.extend(
            self.value_hess_entries
                .iter()
                .filter(|e| !e.within(tol.hess_values_rel, tol.hess_abs))
                .map(|e| (Check::ValueHessian, *e)),
        );
        out
    }
}

fn hessian_entries(analytic: &Matrix, numeric: &Matrix) -> Vec<Entry> {
    let p = analytic.rows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in i..p {
            out.push(Entry::new(i, Some(j), analytic[(i, j)], numeric[(i, j)]));
        }
    }
    out
}

fn max_rel(entries: &[Entry]) -> f64 {
    entries.iter().fold(0.0, |acc, e| acc.max(e.rel_err))
}

/// Analytic gradient and Hessian next to their finite-difference
/// counterparts.
pub fn compare<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    cfg: &FdConfig,
    opts: CompareOptions,
) -> Result<ComparisonReport> {
    if opts.value_hessian && !(opts.value_step > 0.0) {
        return Err(Error::InvalidConfig(format!("value_step must be positive, got {}", opts.value_step)));
    }
    let analytic = evaluate(spec, theta, y, init, Order::Hessian)?;
    let numeric_grad = fd_gradient(spec, theta, y, init, cfg)?;
    let numeric_hessian = fd_hessian(spec, theta, y, init, cfg)?;
    let value_hessian = if opts.value_hessian {
        let steps = FdConfig {
            rel_step: opts.value_step,
            min_step: opts.value_step,
        };
        Some(fd_hessian_from_values(spec, theta, y, init, &steps)?)
    } else {
        None
    };
    let grad = analytic.grad.as_deref().unwrap_or_default();
    let hess = analytic
        .hessian
        .as_ref()
        .ok_or_else(|| Error::InvariantViolation("hessian requested".into()))?;

    let grad_entries: Vec<Entry> = grad
        .iter()
        .zip(&numeric_grad)
        .enumerate()
        .map(|(i, (&a, &n))| Entry::new(i, None, a, n))
        .collect();
    let hess_entries = hessian_entries(hess, &numeric_hessian);
    let value_hess_entries = value_hessian.as_ref().map(|v| hessian_entries(hess, v)).unwrap_or_default();

    Ok(ComparisonReport {
        max_rel_err_grad: max_rel(&grad_entries),
        max_rel_err_hess: max_rel(&hess_entries),
        max_rel_err_value_hess: value_hessian.as_ref().map(|_| max_rel(&value_hess_entries)),
        analytic,
        numeric_grad,
        numeric_hessian,
        value_hessian,
        grad_entries,
        hess_entries,
        value_hess_entries,
    })
}
