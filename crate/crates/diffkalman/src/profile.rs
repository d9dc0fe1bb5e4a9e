//! Likelihood profiles over one- or two-parameter grids.

use std::str::FromStr;

use diffkalman_core::{evaluate, InitialCondition, ModelSpec, Order};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{num, opt, table};

/// `param:start:stop:count`, evenly spaced and inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub param: usize,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Grid {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [param, start, stop, count] = parts[..] else {
            return Err(bad("expected param:start:stop:count"));
        };
        let param = param.parse().map_err(|_| bad("parameter index is not a non-negative integer"))?;
        let start: f64 = start.parse().map_err(|_| bad("start is not a number"))?;
        let stop: f64 = stop.parse().map_err(|_| bad("stop is not a number"))?;
        let count = count.parse().map_err(|_| bad("count is not a non-negative integer"))?;
        if !start.is_finite() || !stop.is_finite() {
            return Err(bad("bounds must be finite"));
        }
        if count == 0 {
            return Err(bad("count must be at least 1"));
        }
        Ok(Self { param, start, stop, count })
    }
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| if k + 1 == self.count { self.stop } else { self.start + step * k as f64 })
            .collect()
    }
}

/// One grid point. Derivative fields are `None` where evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub theta: Vec<f64>,
    pub loglik: Option<f64>,
    pub grad: Option<Vec<f64>>,
    /// Upper triangle, row-major.
    pub hessian: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
    pub error: Option<String>,
}

/// Evaluates `ℓ`, `∇ℓ`, `∇²ℓ` and `σ̂²` at every grid point, varying the
/// axis parameters of `base`. With two axes the first is the outer loop.
pub fn profile<M>(spec: &M, base: &[f64], axes: &[GridAxis], y: &[f64], init: &InitialCondition) -> Result<Vec<ProfileRow>>
where
    M: ModelSpec + Sync + ?Sized,
{
    spec.check_theta(base)?;
    let p = spec.param_count();
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Argument(format!("need one or two grid axes, got {}", axes.len())));
    }
    for a in axes {
        if a.param >= p {
            return Err(Error::Argument(format!("grid parameter {} out of range for {p} parameters", a.param)));
        }
    }
    if axes.len() == 2 && axes[0].param == axes[1].param {
        return Err(Error::Argument("grid axes must vary different parameters".into()));
    }

    let mut points = vec![base.to_vec()];
    for a in axes {
        points = points
            .iter()
            .flat_map(|t| {
                a.values().into_iter().map(move |v| {
                    let mut t = t.clone();
                    t[a.param] = v;
                    t
                })
            })
            .collect();
    }

    Ok(points
        .into_par_iter()
        .map(|theta| match evaluate(spec, &theta, y, init, Order::Hessian) {
            Ok(r) => {
                let h = r.hessian.expect("hessian requested");
                let upper = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).map(|(i, j)| h[(i, j)]).collect();
                ProfileRow {
                    theta,
                    loglik: Some(r.loglik),
                    grad: r.grad,
                    hessian: Some(upper),
                    sigma2: Some(r.sigma2),
                    error: None,
                }
            }
            Err(e) => ProfileRow {
                theta,
                loglik: None,
                grad: None,
                hessian: None,
                sigma2: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

pub fn to_table(rows: &[ProfileRow], p: usize) -> String {
    let mut header: Vec<String> = (0..p).map(|i| format!("theta_{i}")).collect();
    header.push("loglik".into());
    header.extend((0..p).map(|i| format!("grad_{i}")));
    header.extend((0..p).flat_map(|i| (i..p).map(move |j| format!("hess_{i}_{j}"))));
    header.push("sigma2".into());
    let n_hess = p * (p + 1) / 2;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells: Vec<String> = r.theta.iter().map(|v| num(*v)).collect();
            cells.push(opt(r.loglik));
            match &r.grad {
                Some(g) => cells.extend(g.iter().map(|v| num(*v))),
                None => cells.extend(std::iter::repeat_n("NA".to_string(), p)),
            }
            match &r.hessian {
                Some(h) => cells.extend(h.iter().map(|v| num(*v))),
                None => cells.extend(std::iter::repeat_n("NA".to_string(), n_hess)),
            }
            cells.push(opt(r.sigma2));
            cells
        })
        .collect();
    table(&header, &body)
}
