//! Analytic-versus-difference derivative checks.

use std::fmt::Write as _;
use std::time::Instant;

use diffkalman_core::verify::{Check, Entry};
use diffkalman_core::{compare, evaluate, fd_gradient, CompareOptions, ComparisonReport, FdConfig, InitialCondition, ModelSpec, Order, Tolerances};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::format::{num, table};

/// Best-of-`repeats` wall times for one analytic gradient pass and for the
/// `2p` likelihood evaluations of the central-difference gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub analytic_gradient_secs: f64,
    pub fd_gradient_secs: f64,
    pub fd_evaluations: usize,
    pub repeats: usize,
}

pub fn time_gradients<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    cfg: &FdConfig,
    repeats: usize,
) -> Result<Timing> {
    let repeats = repeats.max(1);
    let mut analytic = f64::INFINITY;
    let mut fd = f64::INFINITY;
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(evaluate(spec, theta, y, init, Order::Gradient)?);
        analytic = analytic.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(fd_gradient(spec, theta, y, init, cfg)?);
        fd = fd.min(t.elapsed().as_secs_f64());
    }
    Ok(Timing {
        analytic_gradient_secs: analytic,
        fd_gradient_secs: fd,
        fd_evaluations: 2 * spec.param_count(),
        repeats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub check: Check,
    pub entry: Entry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub model: String,
    pub theta: Vec<f64>,
    pub fd: FdConfig,
    pub tolerances: Tolerances,
    pub report: ComparisonReport,
    pub failures: Vec<Failure>,
    pub timing: Timing,
}

#[allow(clippy::too_many_arguments)]
pub fn gradcheck<M: ModelSpec + ?Sized>(
    spec: &M,
    model: &str,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    fd: &FdConfig,
    tolerances: &Tolerances,
    opts: CompareOptions,
) -> Result<GradCheck> {
    let report = compare(spec, theta, y, init, fd, opts)?;
    let failures = report.failures(tolerances).into_iter().map(|(check, entry)| Failure { check, entry }).collect();
    let timing = time_gradients(spec, theta, y, init, fd, 3)?;
    Ok(GradCheck {
        model: model.to_string(),
        theta: theta.to_vec(),
        fd: *fd,
        tolerances: *tolerances,
        report,
        failures,
        timing,
    })
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// 0 when every entry is within tolerance, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn to_table(&self) -> String {
        let r = &self.report;
        let mut out = String::new();
        writeln!(out, "model   {}", self.model).unwrap();
        writeln!(out, "loglik  {}", num(r.analytic.loglik)).unwrap();
        writeln!(out, "sigma2  {}", num(r.analytic.sigma2)).unwrap();
        out.push_str("\ngradient\n");
        out.push_str(&entries(&r.grad_entries, self.tolerances.grad_rel, self.tolerances.grad_abs));
        out.push_str("\nhessian (differences of the analytic gradient)\n");
        out.push_str(&entries(&r.hess_entries, self.tolerances.hess_rel, self.tolerances.hess_abs));
        if !r.value_hess_entries.is_empty() {
            out.push_str("\nhessian (second differences of the log-likelihood)\n");
            out.push_str(&entries(&r.value_hess_entries, self.tolerances.hess_values_rel, self.tolerances.hess_abs));
        }
        writeln!(out, "\nmax relative error: gradient {}, hessian {}", num(r.max_rel_err_grad), num(r.max_rel_err_hess)).unwrap();
        if let Some(v) = r.max_rel_err_value_hess {
            writeln!(out, "max relative error: hessian from values {}", num(v)).unwrap();
        }
        writeln!(
            out,
            "time: analytic gradient {:.3e} s, difference gradient {:.3e} s ({} evaluations)",
            self.timing.analytic_gradient_secs, self.timing.fd_gradient_secs, self.timing.fd_evaluations
        )
        .unwrap();
        if self.passed() {
            out.push_str("PASS\n");
        } else {
            writeln!(out, "FAIL: {} entries out of tolerance", self.failures.len()).unwrap();
            for f in &self.failures {
                let e = &f.entry;
                let at = e.j.map_or_else(|| format!("[{}]", e.i), |j| format!("[{},{}]", e.i, j));
                writeln!(out, "  {:?}{at}: analytic {} numeric {}", f.check, num(e.analytic), num(e.numeric)).unwrap();
            }
        }
        out
    }
}

fn entries(list: &[Entry], rel: f64, abs: f64) -> String {
    let header = ["entry", "analytic", "numeric", "rel_err", "ok"].map(String::from);
    let body: Vec<Vec<String>> = list
        .iter()
        .map(|e| {
            let at = e.j.map_or_else(|| e.i.to_string(), |j| format!("{},{}", e.i, j));
            let ok = if e.within(rel, abs) { "yes" } else { "NO" };
            vec![at, num(e.analytic), num(e.numeric), format!("{:.2e}", e.rel_err), ok.into()]
        })
        .collect();
    table(&header, &body)
}
