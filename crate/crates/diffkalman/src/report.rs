//! Fit reports.

use std::fmt::Write as _;

use diffkalman_core::linalg::spd_inverse;
use diffkalman_core::optimize::{MultiStart, OptimResult, Termination};
use diffkalman_core::{Matrix, ModelSpec, NaturalParam, StructuralModel};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::format::{num, opt, table};

/// Outcome of one optimizer start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub theta0: Vec<f64>,
    pub theta_hat: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub n_obs: usize,
    pub theta_hat: Vec<f64>,
    pub natural: Vec<NaturalParam>,
    pub sigma2: f64,
    pub loglik: f64,
    pub grad: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    /// Square roots of the diagonal of `(−∇²ℓ)⁻¹` in `θ` units; asymptotic
    /// only, and absent when `−∇²ℓ` is not positive definite.
    pub standard_errors: Option<Vec<f64>>,
    pub standard_errors_kind: String,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub best_start: usize,
    pub starts: Vec<StartSummary>,
}

pub fn standard_errors(hessian: &Matrix) -> Option<Vec<f64>> {
    let cov = spd_inverse(&hessian.scaled(-1.0))?;
    (0..cov.rows()).map(|i| Some(cov[(i, i)]).filter(|v| *v > 0.0).map(f64::sqrt)).collect()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

impl FitReport {
    /// Report for the best run of `ms`; `starts[k]` is the start of run `k`.
    pub fn new(model: &StructuralModel, n_obs: usize, starts: &[Vec<f64>], ms: &MultiStart) -> Result<Self> {
        let best: &OptimResult = ms.best_result();
        let summaries = starts
            .iter()
            .zip(&ms.runs)
            .map(|(theta0, run)| match run {
                Ok(r) => StartSummary {
                    theta0: theta0.clone(),
                    theta_hat: Some(r.theta_hat.to_vec()),
                    loglik: Some(r.loglik),
                    converged: r.converged,
                    iterations: r.iterations,
                    termination: Some(r.termination),
                    error: None,
                },
                Err(e) => StartSummary {
                    theta0: theta0.clone(),
                    theta_hat: None,
                    loglik: None,
                    converged: false,
                    iterations: 0,
                    termination: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        Ok(Self {
            model: model.label(),
            n_obs,
            theta_hat: best.theta_hat.to_vec(),
            natural: model.describe(&best.theta_hat)?,
            sigma2: best.sigma2.unwrap_or(f64::NAN),
            loglik: best.loglik,
            grad: best.grad_at_opt.clone(),
            hessian: rows(&best.hessian_at_opt),
            standard_errors: standard_errors(&best.hessian_at_opt),
            standard_errors_kind: "asymptotic".into(),
            converged: best.converged,
            termination: best.termination,
            iterations: best.iterations,
            best_start: ms.best,
            starts: summaries,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "model          {}", self.model).unwrap();
        writeln!(out, "observations   {}", self.n_obs).unwrap();
        writeln!(
            out,
            "converged      {} ({}, {} iterations)",
            if self.converged { "yes" } else { "no" },
            termination_name(Some(self.termination)),
            self.iterations
        )
        .unwrap();
        writeln!(out, "loglik         {}", num(self.loglik)).unwrap();
        writeln!(out, "sigma2         {}", num(self.sigma2)).unwrap();
        out.push('\n');

        let se = |i: usize| opt(self.standard_errors.as_ref().map(|s| s[i]));
        let header = ["i", "theta", "grad", "hessian_ii", "std_err"].map(String::from);
        let body: Vec<Vec<String>> = (0..self.theta_hat.len())
            .map(|i| vec![i.to_string(), num(self.theta_hat[i]), num(self.grad[i]), num(self.hessian[i][i]), se(i)])
            .collect();
        out.push_str(&table(&header, &body));
        writeln!(out, "(standard errors are {})", self.standard_errors_kind).unwrap();
        out.push('\n');

        let body: Vec<Vec<String>> = self.natural.iter().map(|p| vec![p.label.clone(), num(p.value)]).collect();
        out.push_str(&table(&["parameter".into(), "value".into()], &body));

        if self.theta_hat.len() > 1 {
            out.push_str("\nhessian\n");
            let body: Vec<Vec<String>> = self.hessian.iter().map(|r| r.iter().map(|v| num(*v)).collect()).collect();
            let header: Vec<String> = (0..self.theta_hat.len()).map(|j| j.to_string()).collect();
            out.push_str(&table(&header, &body));
        }

        if self.starts.len() > 1 {
            out.push_str("\nstarts\n");
            let body: Vec<Vec<String>> = self
                .starts
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let mark = if k == self.best_start { "*" } else { "" };
                    vec![
                        format!("{mark}{k}"),
                        list(&s.theta0),
                        opt(s.loglik),
                        s.converged.to_string(),
                        s.iterations.to_string(),
                        s.theta_hat.as_deref().map_or_else(|| "NA".into(), list),
                        s.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            let header = ["start", "theta0", "loglik", "converged", "iterations", "theta_hat", "error"].map(String::from);
            out.push_str(&table(&header, &body));
        }
        out
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

pub fn termination_name(t: Option<Termination>) -> &'static str {
    match t {
        Some(Termination::GradientTolerance) => "gradient-tolerance",
        Some(Termination::MaxIterations) => "max-iterations",
        Some(Termination::LineSearchFailure) => "line-search-failure",
        None => "error",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_errors_need_negative_definite_hessian() {
        let h = Matrix::from_rows(&[&[-4.0, 0.0], &[0.0, -0.25]]);
        assert_eq!(standard_errors(&h), Some(vec![0.5, 2.0]));
        let indefinite = Matrix::from_rows(&[&[-4.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(standard_errors(&indefinite), None);
    }
}
