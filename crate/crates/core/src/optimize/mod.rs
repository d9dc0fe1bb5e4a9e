//! Maximum likelihood estimation with analytic derivatives.
//!
//! Both methods minimize `f = −ℓ`. BFGS keeps an approximation `B⁻¹` to the
//! inverse of `−∇²ℓ` and steps along `d = B⁻¹ ∇ℓ`. Newton solves
//! `(−∇²ℓ + μI) d = ∇ℓ` with `μ = 0` when `−∇²ℓ` is positive definite and
//! otherwise `μ` doubling from `1e-6` until the shifted matrix factors.
//! Either direction is scaled by a strong-Wolfe line search.

mod line_search;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diff_filter::{evaluate, Order};
use crate::error::{Error, Result};
use crate::kalman::InitialCondition;
use crate::linalg::{cholesky, cholesky_solve, dot, max_abs, Matrix};
use crate::model::{ModelSpec, ParamVector};

use line_search::{strong_wolfe, Outcome, Trial, WolfeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    Bfgs,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerConfig {
    pub method: Method,
    /// Stop once `‖∇ℓ‖∞` falls to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Largest `∞`-norm of the first BFGS step.
    pub initial_step: f64,
    /// Largest `∞`-norm of any step.
    pub max_step: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
    /// Relative size of the band around `ℓ` inside which values are taken
    /// to be equal and the line search compares slopes instead.
    pub flat_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Bfgs,
            grad_tol: 1e-6,
            max_iter: 200,
            initial_step: 1.0,
            max_step: 10.0,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search: 40,
            flat_tol: 1e-10,
        }
    }
}

impl OptimizerConfig {
    pub fn newton() -> Self {
        Self {
            method: Method::Newton,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if !(self.initial_step > 0.0) || !self.initial_step.is_finite() {
            return Err(Error::InvalidConfig(format!("initial_step must be positive, got {}", self.initial_step)));
        }
        if !(self.max_step >= self.initial_step) {
            return Err(Error::InvalidConfig(format!(
                "max_step must be at least initial_step, got {} < {}",
                self.max_step, self.initial_step
            )));
        }
        if !(0.0..1.0).contains(&self.flat_tol) {
            return Err(Error::InvalidConfig(format!("flat_tol must be in [0, 1), got {}", self.flat_tol)));
        }
        if self.max_line_search == 0 {
            return Err(Error::InvalidConfig("max_line_search must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimResult {
    pub theta_hat: ParamVector,
    pub loglik: f64,
    pub grad_at_opt: Vec<f64>,
    pub hessian_at_opt: Matrix,
    pub sigma2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Starting point first, then one record per accepted iteration.
    pub trace: Vec<IterationRecord>,
}

/// Value and derivatives of the function being maximized.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hessian: Option<Matrix>,
    pub sigma2: Option<f64>,
}

/// A smooth function to maximize. `order` is at least [`Order::Gradient`].
pub trait Objective {
    fn dim(&self) -> usize;

    fn eval(&self, theta: &[f64], order: Order) -> Result<Evaluation>;
}

/// `ℓ(θ)` for a model and a series.
pub struct LikelihoodObjective<'a, M: ?Sized> {
    pub spec: &'a M,
    pub y: &'a [f64],
    pub init: &'a InitialCondition,
}

impl<M: ModelSpec + ?Sized> Objective for LikelihoodObjective<'_, M> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn eval(&self, theta: &[f64], order: Order) -> Result<Evaluation> {
        let order = order.max(Order::Gradient);
        let rep = evaluate(self.spec, theta, self.y, self.init, order)?;
        Ok(Evaluation {
            value: rep.loglik,
            grad: rep.grad.unwrap_or_default(),
            hessian: rep.hessian,
            sigma2: Some(rep.sigma2),
        })
    }
}

/// Maximizes `ℓ(θ)` from `theta0`.
pub fn maximize<M: ModelSpec + ?Sized>(
    spec: &M,
    theta0: &[f64],
    y: &[f64],
    init: &InitialCondition,
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    let obj = LikelihoodObjective { spec, y, init };
    maximize_objective(&obj, theta0, cfg)
}

/// All runs of [`multistart`] and the index of the best one.
#[derive(Debug, Clone)]
pub struct MultiStart {
    pub best: usize,
    pub runs: Vec<Result<OptimResult>>,
}

impl MultiStart {
    pub fn best_result(&self) -> &OptimResult {
        match &self.runs[self.best] {
            Ok(r) => r,
            Err(_) => unreachable!("best always points at a successful run"),
        }
    }
}

/// Runs [`maximize`] from every start; a failing start does not stop the
/// others. Fails only if no start succeeds.
pub fn multistart<M: ModelSpec + ?Sized>(
    spec: &M,
    starts: &[Vec<f64>],
    y: &[f64],
    init: &InitialCondition,
    cfg: &OptimizerConfig,
) -> Result<MultiStart> {
    let runs = starts.iter().map(|s| maximize(spec, s, y, init, cfg)).collect();
    select_best(runs)
}

/// Picks the highest-`ℓ` successful run, preferring the earliest on ties.
pub fn select_best(runs: Vec<Result<OptimResult>>) -> Result<MultiStart> {
    if runs.is_empty() {
        return Err(Error::Empty("starting points"));
    }
    let mut best: Option<usize> = None;
    for (k, run) in runs.iter().enumerate() {
        if let Ok(r) = run {
            let better = match best {
                None => true,
                Some(b) => match &runs[b] {
                    Ok(rb) => r.loglik > rb.loglik,
                    Err(_) => true,
                },
            };
            if better {
                best = Some(k);
            }
        }
    }
    match best {
        Some(best) => Ok(MultiStart { best, runs }),
        None => Err(runs.into_iter().find_map(|r| r.err()).unwrap_or(Error::Empty("starting points"))),
    }
}

/// Maximizes an arbitrary [`Objective`].
pub fn maximize_objective<O: Objective + ?Sized>(obj: &O, theta0: &[f64], cfg: &OptimizerConfig) -> Result<OptimResult> {
    cfg.validate()?;
    let p = obj.dim();
    if theta0.len() != p {
        return Err(Error::mismatch("theta0", (p, 1), (theta0.len(), 1)));
    }
    let eval_order = match cfg.method {
        Method::Bfgs => Order::Gradient,
        Method::Newton => Order::Hessian,
    };
    let mut theta = theta0.to_vec();
    let mut cur = obj.eval(&theta, eval_order).map_err(|e| start_error(e, "theta0"))?;
    check_evaluation(&cur, p, "theta0")?;

    let mut trace = vec![IterationRecord {
        theta: theta.clone(),
        loglik: cur.value,
        grad_norm: max_abs(&cur.grad),
    }];
    let mut inv_b = Matrix::identity(p);
    let mut fresh_inverse = true;
    let mut iterations = 0;

    let termination = loop {
        if max_abs(&cur.grad) <= cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIterations;
        }

        // ascent direction for ℓ, i.e. descent direction for −ℓ
        let mut dir = match cfg.method {
            Method::Bfgs => inv_b.mul_vec(&cur.grad),
            Method::Newton => newton_direction(cur.hessian.as_ref().expect("newton evaluates the hessian"), &cur.grad),
        };
        let mut slope = dot(&cur.grad, &dir);
        if !(slope > 0.0) || !slope.is_finite() {
            dir = cur.grad.clone();
            slope = dot(&dir, &dir);
            inv_b = Matrix::identity(p);
            fresh_inverse = true;
        }
        let alpha0 = if cfg.method == Method::Bfgs && fresh_inverse {
            (cfg.initial_step / max_abs(&dir)).min(1.0)
        } else {
            1.0
        };

        let wolfe = WolfeParams {
            c1: cfg.wolfe_c1,
            c2: cfg.wolfe_c2,
            max_evals: cfg.max_line_search,
            alpha_max: cfg.max_step / max_abs(&dir),
            flat_tol: cfg.flat_tol,
        };
        let outcome = strong_wolfe(-cur.value, -slope, alpha0, wolfe, |alpha| {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect();
            let ev = obj.eval(&trial, eval_order).ok()?;
            if ev.grad.len() != p {
                return None;
            }
            let t = Trial {
                alpha,
                phi: -ev.value,
                dphi: -dot(&ev.grad, &dir),
            };
            Some((t, (trial, ev)))
        });

        let (next_theta, next, failed) = match outcome {
            Outcome::Accepted(pt) => (pt.0, pt.1, false),
            Outcome::Failed { best: Some(pt), .. } => (pt.0, pt.1, true),
            Outcome::Failed { best: None, .. } => break Termination::LineSearchFailure,
        };

        if cfg.method == Method::Bfgs {
            let s: Vec<f64> = next_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
            // gradient change of f = −ℓ
            let yv: Vec<f64> = cur.grad.iter().zip(&next.grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if failed || !(sy > 0.0) {
                inv_b = Matrix::identity(p);
                fresh_inverse = true;
            } else {
                if fresh_inverse {
                    inv_b = Matrix::identity(p).scaled(sy / dot(&yv, &yv));
                }
                bfgs_update(&mut inv_b, &s, &yv, sy);
                fresh_inverse = false;
            }
        }

        theta = next_theta;
        cur = next;
        iterations += 1;
        trace.push(IterationRecord {
            theta: theta.clone(),
            loglik: cur.value,
            grad_norm: max_abs(&cur.grad),
        });
        if failed {
            break if max_abs(&cur.grad) <= cfg.grad_tol {
                Termination::GradientTolerance
            } else {
                Termination::LineSearchFailure
            };
        }
    };

    let hessian = match cur.hessian.take() {
        Some(h) => h,
        None => obj
            .eval(&theta, Order::Hessian)?
            .hessian
            .ok_or_else(|| Error::InvariantViolation("objective returned no hessian".into()))?,
    };
    Ok(OptimResult {
        theta_hat: ParamVector::new(theta)?,
        loglik: cur.value,
        grad_at_opt: cur.grad,
        hessian_at_opt: hessian,
        sigma2: cur.sigma2,
        iterations,
        converged: termination == Termination::GradientTolerance,
        termination,
        trace,
    })
}

fn start_error(e: Error, context: &str) -> Error {
    match e {
        Error::DimensionMismatch { .. } | Error::InvalidConfig(_) => e,
        other => Error::NonFiniteObjective {
            context: format!("{context}: {other}"),
        },
    }
}

fn check_evaluation(ev: &Evaluation, p: usize, context: &str) -> Result<()> {
    if ev.grad.len() != p {
        return Err(Error::mismatch("gradient", (p, 1), (ev.grad.len(), 1)));
    }
    if !ev.value.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteObjective { context: context.into() });
    }
    Ok(())
}

/// Solves `(−H + μI) d = g` with the smallest `μ ∈ {0, 1e-6, 2e-6, …}`
/// for which the matrix factors. Falls back to `d = g`.
fn newton_direction(hessian: &Matrix, grad: &[f64]) -> Vec<f64> {
    let p = grad.len();
    let neg = hessian.scaled(-1.0);
    if let Some(l) = cholesky(&neg) {
        return cholesky_solve(&l, grad);
    }
    let mut mu = 1e-6;
    for _ in 0..1100 {
        let mut shifted = neg.clone();
        for i in 0..p {
            shifted[(i, i)] += mu;
        }
        if let Some(l) = cholesky(&shifted) {
            return cholesky_solve(&l, grad);
        }
        mu *= 2.0;
        if !mu.is_finite() {
            break;
        }
    }
    grad.to_vec()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1/(yᵀs)`.
fn bfgs_update(h: &mut Matrix, s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = h.mul_vec(y);
    let yhy = dot(y, &hy);
    let p = s.len();
    for i in 0..p {
        for j in 0..p {
            h[(i, j)] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    h.symmetrize();
}
