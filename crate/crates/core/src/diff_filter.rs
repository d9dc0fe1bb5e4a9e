//! Parameter sensitivities of the Kalman filter, run in lockstep with it.
//!
//! For every parameter `θ_i` the recursions carry `∂x/∂θ_i` and `∂V/∂θ_i`
//! through the prediction and update steps; for every pair `(i, j)` they
//! carry `∂²x/∂θ_i∂θ_j` and `∂²V/∂θ_i∂θ_j`. From the innovation
//! derivatives the gradient and Hessian of the concentrated log-likelihood
//! follow by differentiating
//!
//! ```text
//! ℓ = -½ (N log 2πσ̂² + Σ log r_n + N),   σ̂² = (1/N) Σ ε_n²/r_n
//! ```
//!
//! directly:
//!
//! ```text
//! ∂ℓ/∂θ_i     = -½ (N ∂σ̂²_i/σ̂² + Σ ∂r_i/r)
//! ∂²ℓ/∂θ_i∂θ_j = -½ N (∂²σ̂²_ij/σ̂² − ∂σ̂²_i ∂σ̂²_j/σ̂⁴) − ½ Σ (∂²r_ij/r − ∂r_i ∂r_j/r²)
//! ```
//!
//! Every covariance-like product has the form `A B Aᵀ` with `B` symmetric
//! (`F V Fᵀ`, `G Q Gᵀ`, `H V Hᵀ`), so both derivative orders are expanded
//! once, generically, by the product rule in [`congruence_first`] and
//! [`congruence_second`].
//!
//! Absent (zero) derivative matrices in the bundle are skipped, which for
//! the variance-only trend and seasonal models leaves just the `F ∂V Fᵀ`
//! and `G ∂Q Gᵀ` terms.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kalman::{filter_with, FilterStep, InitialCondition};
use crate::linalg::{axpy, dot, Matrix};
use crate::model::{pair_index, Component, DerivativeBundle, ModelSpec, SystemMatrices};

/// How much derivative state [`evaluate`] propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// `∂x/∂θ_i` and `∂V/∂θ_i` for one filter phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub dx: Vec<Vec<f64>>,
    pub dv: Vec<Matrix>,
}

impl SensitivityState {
    pub fn zeros(p: usize, m: usize) -> Self {
        Self {
            dx: vec![vec![0.0; m]; p],
            dv: vec![Matrix::zeros(m, m); p],
        }
    }

    pub fn param_count(&self) -> usize {
        self.dx.len()
    }
}

/// `∂²x/∂θ_i∂θ_j` and `∂²V/∂θ_i∂θ_j`, stored once per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureState {
    p: usize,
    d2x: Vec<Vec<f64>>,
    d2v: Vec<Matrix>,
}

impl CurvatureState {
    pub fn zeros(p: usize, m: usize) -> Self {
        let pairs = p * (p + 1) / 2;
        Self {
            p,
            d2x: vec![vec![0.0; m]; pairs],
            d2v: vec![Matrix::zeros(m, m); pairs],
        }
    }

    pub fn d2x(&self, i: usize, j: usize) -> &[f64] {
        &self.d2x[pair_index(self.p, i, j)]
    }

    pub fn d2v(&self, i: usize, j: usize) -> &Matrix {
        &self.d2v[pair_index(self.p, i, j)]
    }
}

/// Derivatives of `u = V_{n|n-1} Hᵀ` and of the gain `K = u/r`, shared by
/// the first- and second-order update.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSensitivity {
    pub u: Vec<f64>,
    pub du: Vec<Vec<f64>>,
    pub dk: Vec<Vec<f64>>,
}

/// Log-likelihood with optional derivatives.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivativeReport {
    pub loglik: f64,
    pub sigma2: f64,
    pub n_obs: usize,
    pub grad: Option<Vec<f64>>,
    pub hessian: Option<Matrix>,
    pub dsigma2: Option<Vec<f64>>,
    pub d2sigma2: Option<Matrix>,
    pub eps_trace: Vec<f64>,
    pub r_trace: Vec<f64>,
    /// `∂ε_n/∂θ` per step, when requested.
    pub deps_trace: Option<Vec<Vec<f64>>>,
    /// `∂r_n/∂θ` per step, when requested.
    pub dr_trace: Option<Vec<Vec<f64>>>,
}

/// Options for [`evaluate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub order: Order,
    pub keep_traces: bool,
}

impl From<Order> for EvalOptions {
    fn from(order: Order) -> Self {
        Self {
            order,
            keep_traces: false,
        }
    }
}

/// First derivative of `A B Aᵀ` (with `B` symmetric) given the derivatives
/// `dA`, `dB` along one parameter. `None` means identically zero.
pub fn congruence_first(a: &Matrix, b: &Matrix, da: Option<&Matrix>, db: Option<&Matrix>) -> Option<Matrix> {
    let mut out: Option<Matrix> = None;
    if let Some(db) = db {
        out = Some(a.congruence(db));
    }
    if let Some(da) = da {
        let cross = da.mul(b).mul_transpose(a).plus_transpose();
        accumulate(&mut out, &cross);
    }
    out
}

/// Derivative inputs along one parameter for [`congruence_second`].
#[derive(Clone, Copy)]
pub struct Partials<'a> {
    pub da: Option<&'a Matrix>,
    pub db: Option<&'a Matrix>,
}

/// Mixed second derivative of `A B Aᵀ` (with `B`, `∂B` and `∂²B`
/// symmetric):
///
/// ```text
/// A ∂²B Aᵀ + S + Sᵀ,
/// S = ∂_iA ∂_jB Aᵀ + ∂_jA ∂_iB Aᵀ + ∂²A B Aᵀ + ∂_iA B ∂_jAᵀ
/// ```
pub fn congruence_second(
    a: &Matrix,
    b: &Matrix,
    pi: Partials<'_>,
    pj: Partials<'_>,
    d2a: Option<&Matrix>,
    d2b: Option<&Matrix>,
) -> Option<Matrix> {
    let mut out: Option<Matrix> = d2b.map(|d2b| a.congruence(d2b));
    let mut side: Option<Matrix> = None;
    if let (Some(da), Some(db)) = (pi.da, pj.db) {
        accumulate(&mut side, &da.mul(db).mul_transpose(a));
    }
    if let (Some(da), Some(db)) = (pj.da, pi.db) {
        accumulate(&mut side, &da.mul(db).mul_transpose(a));
    }
    if let Some(d2a) = d2a {
        accumulate(&mut side, &d2a.mul(b).mul_transpose(a));
    }
    if let (Some(dai), Some(daj)) = (pi.da, pj.da) {
        accumulate(&mut side, &dai.mul(b).mul_transpose(daj));
    }
    if let Some(side) = side {
        accumulate(&mut out, &side.plus_transpose());
    }
    out
}

fn accumulate(acc: &mut Option<Matrix>, term: &Matrix) {
    match acc {
        Some(m) => m.add_assign(term),
        None => *acc = Some(term.clone()),
    }
}

/// `∂x_{n|n-1}` and `∂V_{n|n-1}` from the filtered-phase sensitivities at
/// `n − 1`.
pub fn predict_sensitivities(
    prev: &SensitivityState,
    x_prev: &[f64],
    v_prev: &Matrix,
    sm: &SystemMatrices,
    db: &DerivativeBundle,
) -> Result<SensitivityState> {
    let p = db.param_count();
    check_sensitivity_shapes(prev, p, sm.state_dim())?;
    let mut dx = Vec::with_capacity(p);
    let mut dv = Vec::with_capacity(p);
    // V Fᵀ, shared by every ∂F cross term
    let mut vft: Option<Matrix> = None;
    for i in 0..p {
        let df = db.first(Component::F, i);
        let mut dxi = sm.f.mul_vec(&prev.dx[i]);
        if let Some(df) = df {
            let t = df.mul_vec(x_prev);
            axpy(1.0, &t, &mut dxi);
        }
        let mut dvi = sm.f.congruence(&prev.dv[i]);
        if let Some(df) = df {
            let w = vft.get_or_insert_with(|| v_prev.mul_transpose(&sm.f));
            dvi.add_assign(&df.mul(w).plus_transpose());
        }
        if let Some(d) = congruence_first(&sm.g, &sm.q, db.first(Component::G, i), db.first(Component::Q, i)) {
            dvi.add_assign(&d);
        }
        dvi.symmetrize();
        dx.push(dxi);
        dv.push(dvi);
    }
    Ok(SensitivityState { dx, dv })
}

fn check_sensitivity_shapes(s: &SensitivityState, p: usize, m: usize) -> Result<()> {
    if s.dx.len() != p || s.dv.len() != p {
        return Err(Error::mismatch("sensitivity state", (p, 1), (s.dx.len(), 1)));
    }
    for (dx, dv) in s.dx.iter().zip(&s.dv) {
        if dx.len() != m {
            return Err(Error::mismatch("dx", (m, 1), (dx.len(), 1)));
        }
        if dv.shape() != (m, m) {
            return Err(Error::mismatch("dV", (m, m), dv.shape()));
        }
    }
    Ok(())
}

/// `∂ε_n/∂θ` and `∂r_n/∂θ` from predicted-phase sensitivities.
pub fn innovation_sensitivities(
    sens: &SensitivityState,
    x_pred: &[f64],
    v_pred: &Matrix,
    sm: &SystemMatrices,
    db: &DerivativeBundle,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = db.param_count();
    check_sensitivity_shapes(sens, p, sm.state_dim())?;
    let h = sm.h.row(0);
    let mut deps = Vec::with_capacity(p);
    let mut dr = Vec::with_capacity(p);
    for i in 0..p {
        let dh = db.first(Component::H, i);
        let mut de = -dot(h, &sens.dx[i]);
        if let Some(dh) = dh {
            de -= dot(dh.row(0), x_pred);
        }
        let mut d = congruence_first(&sm.h, v_pred, dh, Some(&sens.dv[i])).map_or(0.0, |m| m[(0, 0)]);
        if let Some(drr) = db.first(Component::R, i) {
            d += drr[(0, 0)];
        }
        deps.push(de);
        dr.push(d);
    }
    Ok((deps, dr))
}

/// Filtered-phase sensitivities at `n` plus the gain derivatives the
/// second-order update reuses.
pub fn update_sensitivities(
    sens: &SensitivityState,
    step: &FilterStep,
    deps: &[f64],
    dr: &[f64],
    sm: &SystemMatrices,
    db: &DerivativeBundle,
) -> Result<(SensitivityState, GainSensitivity)> {
    let p = db.param_count();
    let m = sm.state_dim();
    check_sensitivity_shapes(sens, p, m)?;
    if deps.len() != p || dr.len() != p {
        return Err(Error::mismatch("innovation derivatives", (p, 1), (deps.len(), 1)));
    }
    let h = sm.h.row(0);
    let r = step.r;
    let u = step.v_pred.mul_vec(h);
    let mut du_all = Vec::with_capacity(p);
    let mut dk_all = Vec::with_capacity(p);
    let mut dx = Vec::with_capacity(p);
    let mut dv = Vec::with_capacity(p);
    for i in 0..p {
        // ∂u = ∂V Hᵀ + V ∂Hᵀ
        let mut du = sens.dv[i].mul_vec(h);
        if let Some(dh) = db.first(Component::H, i) {
            axpy(1.0, &step.v_pred.mul_vec(dh.row(0)), &mut du);
        }
        // ∂K = ∂u/r − u ∂r/r²
        let mut dk: Vec<f64> = du.iter().map(|v| v / r).collect();
        axpy(-dr[i] / (r * r), &u, &mut dk);

        let mut dxi = sens.dx[i].clone();
        axpy(step.eps, &dk, &mut dxi);
        axpy(deps[i], &step.gain, &mut dxi);

        // ∂V⁺ = ∂V − ∂K uᵀ − K ∂uᵀ
        let mut dvi = sens.dv[i].clone();
        dvi.add_outer(-1.0, &dk, &u);
        dvi.add_outer(-1.0, &step.gain, &du);
        dvi.symmetrize();

        dx.push(dxi);
        dv.push(dvi);
        du_all.push(du);
        dk_all.push(dk);
    }
    Ok((
        SensitivityState { dx, dv },
        GainSensitivity {
            u,
            du: du_all,
            dk: dk_all,
        },
    ))
}

/// Streaming accumulator for `σ̂²`, its derivatives and the `Σ` terms of
/// `∇ℓ` and `∇²ℓ`.
#[derive(Debug, Clone)]
struct LikelihoodAccumulator {
    p: usize,
    /// Σ (2ε ∂ε_i/r − ε² ∂r_i/r²)
    dsig: Vec<f64>,
    /// Σ ∂r_i/r
    dlogr: Vec<f64>,
    /// Σ of the per-step `∂²(ε²/r)` terms, packed.
    d2sig: Vec<f64>,
    /// Σ (∂²r_ij/r − ∂r_i ∂r_j/r²), packed.
    d2logr: Vec<f64>,
}

impl LikelihoodAccumulator {
    fn new(p: usize, order: Order) -> Self {
        let pairs = if order >= Order::Hessian { p * (p + 1) / 2 } else { 0 };
        let singles = if order >= Order::Gradient { p } else { 0 };
        Self {
            p,
            dsig: vec![0.0; singles],
            dlogr: vec![0.0; singles],
            d2sig: vec![0.0; pairs],
            d2logr: vec![0.0; pairs],
        }
    }

    fn push_first(&mut self, eps: f64, r: f64, deps: &[f64], dr: &[f64]) {
        for i in 0..self.p {
            self.dsig[i] += 2.0 * eps * deps[i] / r - eps * eps * dr[i] / (r * r);
            self.dlogr[i] += dr[i] / r;
        }
    }

    fn push_second(&mut self, eps: f64, r: f64, deps: &[f64], dr: &[f64], d2eps: &[f64], d2r: &[f64]) {
        let r2 = r * r;
        let r3 = r2 * r;
        let e2 = eps * eps;
        for i in 0..self.p {
            for j in i..self.p {
                let k = pair_index(self.p, i, j);
                self.d2sig[k] += 2.0 * (deps[i] * deps[j] + eps * d2eps[k]) / r + 2.0 * e2 * dr[i] * dr[j] / r3
                    - (2.0 * eps * deps[j] * dr[i] + 2.0 * eps * deps[i] * dr[j] + e2 * d2r[k]) / r2;
                self.d2logr[k] += d2r[k] / r - dr[i] * dr[j] / r2;
            }
        }
    }

    /// `(dσ̂², ∇ℓ)` given `σ̂²` and `N`.
    fn gradient(&self, sigma2: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let nf = n as f64;
        let dsigma2: Vec<f64> = self.dsig.iter().map(|s| s / nf).collect();
        let grad = dsigma2
            .iter()
            .zip(&self.dlogr)
            .map(|(ds, dl)| -0.5 * (nf * ds / sigma2 + dl))
            .collect();
        (dsigma2, grad)
    }

    /// `(d²σ̂², ∇²ℓ)`, both exactly symmetric.
    fn hessian(&self, sigma2: f64, n: usize, dsigma2: &[f64]) -> (Matrix, Matrix) {
        let nf = n as f64;
        let p = self.p;
        let mut d2s = Matrix::zeros(p, p);
        let mut hess = Matrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let k = pair_index(p, i, j);
                let d2 = self.d2sig[k] / nf;
                let h = -0.5 * nf * (d2 / sigma2 - dsigma2[i] * dsigma2[j] / (sigma2 * sigma2)) - 0.5 * self.d2logr[k];
                d2s[(i, j)] = d2;
                d2s[(j, i)] = d2;
                hess[(i, j)] = h;
                hess[(j, i)] = h;
            }
        }
        (d2s, hess)
    }
}

/// `σ̂²`, `∂σ̂²/∂θ` and `∇ℓ` from per-step innovation traces.
///
/// `deps[n]` and `dr[n]` hold `∂ε_n/∂θ` and `∂r_n/∂θ`.
pub fn sigma2_and_gradient(
    eps: &[f64],
    r: &[f64],
    deps: &[Vec<f64>],
    dr: &[Vec<f64>],
    n: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if eps.len() != n || r.len() != n || deps.len() != n || dr.len() != n {
        return Err(Error::mismatch("traces", (n, 1), (eps.len(), 1)));
    }
    let summary = crate::kalman::concentrated_loglik(eps.to_vec(), r.to_vec())?;
    let p = deps.first().map_or(0, Vec::len);
    let mut acc = LikelihoodAccumulator::new(p, Order::Gradient);
    for t in 0..n {
        if deps[t].len() != p || dr[t].len() != p {
            return Err(Error::mismatch("derivative trace", (p, 1), (deps[t].len(), 1)));
        }
        acc.push_first(eps[t], r[t], &deps[t], &dr[t]);
    }
    let (dsigma2, grad) = acc.gradient(summary.sigma2, n);
    Ok((summary.sigma2, dsigma2, grad))
}

/// `∂²x_{n|n-1}` and `∂²V_{n|n-1}` from filtered-phase state at `n − 1`.
pub fn predict_curvatures(
    prev: &CurvatureState,
    sens_prev: &SensitivityState,
    x_prev: &[f64],
    v_prev: &Matrix,
    sm: &SystemMatrices,
    db: &DerivativeBundle,
) -> Result<CurvatureState> {
    let p = db.param_count();
    let m = sm.state_dim();
    check_sensitivity_shapes(sens_prev, p, m)?;
    if prev.p != p {
        return Err(Error::mismatch("curvature state", (p, p), (prev.p, prev.p)));
    }
    let mut out = CurvatureState {
        p,
        d2x: Vec::with_capacity(prev.d2x.len()),
        d2v: Vec::with_capacity(prev.d2v.len()),
    };
    for i in 0..p {
        for j in i..p {
            let dfi = db.first(Component::F, i);
            let dfj = db.first(Component::F, j);
            let d2f = db.second(Component::F, i, j);

            let mut d2x = sm.f.mul_vec(prev.d2x(i, j));
            if let Some(dfi) = dfi {
                axpy(1.0, &dfi.mul_vec(&sens_prev.dx[j]), &mut d2x);
            }
            if let Some(dfj) = dfj {
                axpy(1.0, &dfj.mul_vec(&sens_prev.dx[i]), &mut d2x);
            }
            if let Some(d2f) = d2f {
                axpy(1.0, &d2f.mul_vec(x_prev), &mut d2x);
            }

            let mut d2v = congruence_second(
                &sm.f,
                v_prev,
                Partials {
                    da: dfi,
                    db: Some(&sens_prev.dv[i]),
                },
                Partials {
                    da: dfj,
                    db: Some(&sens_prev.dv[j]),
                },
                d2f,
                Some(prev.d2v(i, j)),
            )
            .unwrap_or_else(|| Matrix::zeros(m, m));
            let noise = congruence_second(
                &sm.g,
                &sm.q,
                Partials {
                    da: db.first(Component::G, i),
                    db: db.first(Component::Q, i),
                },
                Partials {
                    da: db.first(Component::G, j),
                    db: db.first(Component::Q, j),
                },
                db.second(Component::G, i, j),
                db.second(Component::Q, i, j),
            );
            if let Some(noise) = noise {
                d2v.add_assign(&noise);
            }
            d2v.symmetrize();
            out.d2x.push(d2x);
            out.d2v.push(d2v);
        }
    }
    Ok(out)
}

/// `∂²ε_n` and `∂²r_n` (packed upper triangle, `pair_index` order) from
/// predicted-phase state.
pub fn innovation_curvatures(
    curv: &CurvatureState,
    sens: &SensitivityState,
    x_pred: &[f64],
    v_pred: &Matrix,
    sm: &SystemMatrices,
    db: &DerivativeBundle,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = db.param_count();
    check_sensitivity_shapes(sens, p, sm.state_dim())?;
    let h = sm.h.row(0);
    let pairs = p * (p + 1) / 2;
    let mut d2eps = Vec::with_capacity(pairs);
    let mut d2r = Vec::with_capacity(pairs);
    for i in 0..p {
        for j in i..p {
            let dhi = db.first(Component::H, i);
            let dhj = db.first(Component::H, j);
            let d2h = db.second(Component::H, i, j);
            let mut e = -dot(h, curv.d2x(i, j));
            if let Some(dhi) = dhi {
                e -= dot(dhi.row(0), &sens.dx[j]);
            }
            if let Some(dhj) = dhj {
                e -= dot(dhj.row(0), &sens.dx[i]);
            }
            if let Some(d2h) = d2h {
                e -= dot(d2h.row(0), x_pred);
            }
            let mut rr = congruence_second(
                &sm.h,
                v_pred,
                Partials {
                    da: dhi,
                    db: Some(&sens.dv[i]),
                },
                Partials {
                    da: dhj,
                    db: Some(&sens.dv[j]),
                },
                d2h,
                Some(curv.d2v(i, j)),
            )
            .map_or(0.0, |m| m[(0, 0)]);
            if let Some(d2rr) = db.second(Component::R, i, j) {
                rr += d2rr[(0, 0)];
            }
            d2eps.push(e);
            d2r.push(rr);
        }
    }
    Ok((d2eps, d2r))
}

/// Filtered-phase curvatures at `n`:
///
/// ```text
/// ∂²u  = ∂²V Hᵀ + ∂_iV ∂_jHᵀ + ∂_jV ∂_iHᵀ + V ∂²Hᵀ
/// ∂²K  = ∂²u/r − (∂_iu ∂_jr + ∂_ju ∂_ir)/r² − u ∂²r/r² + 2u ∂_ir ∂_jr/r³
/// ∂²x⁺ = ∂²x + ∂²K ε + ∂_iK ∂_jε + ∂_jK ∂_iε + K ∂²ε
/// ∂²V⁺ = ∂²V − ∂²K uᵀ − ∂_iK ∂_juᵀ − ∂_jK ∂_iuᵀ − K ∂²uᵀ
/// ```
#[allow(clippy::too_many_arguments)]
pub fn update_curvatures(
    curv: &CurvatureState,
    sens: &SensitivityState,
    gain: &GainSensitivity,
    step: &FilterStep,
    deps: &[f64],
    dr: &[f64],
    d2eps: &[f64],
    d2r: &[f64],
    sm: &SystemMatrices,
    db: &DerivativeBundle,
) -> Result<CurvatureState> {
    let p = db.param_count();
    check_sensitivity_shapes(sens, p, sm.state_dim())?;
    let h = sm.h.row(0);
    let r = step.r;
    let (r2, r3) = (r * r, r * r * r);
    let u = &gain.u;
    let mut out = CurvatureState {
        p,
        d2x: Vec::with_capacity(curv.d2x.len()),
        d2v: Vec::with_capacity(curv.d2v.len()),
    };
    for i in 0..p {
        for j in i..p {
            let k = pair_index(p, i, j);
            let mut d2u = curv.d2v(i, j).mul_vec(h);
            if let Some(dhj) = db.first(Component::H, j) {
                axpy(1.0, &sens.dv[i].mul_vec(dhj.row(0)), &mut d2u);
            }
            if let Some(dhi) = db.first(Component::H, i) {
                axpy(1.0, &sens.dv[j].mul_vec(dhi.row(0)), &mut d2u);
            }
            if let Some(d2h) = db.second(Component::H, i, j) {
                axpy(1.0, &step.v_pred.mul_vec(d2h.row(0)), &mut d2u);
            }

            let mut d2k: Vec<f64> = d2u.iter().map(|v| v / r).collect();
            axpy(-dr[j] / r2, &gain.du[i], &mut d2k);
            axpy(-dr[i] / r2, &gain.du[j], &mut d2k);
            axpy(-d2r[k] / r2 + 2.0 * dr[i] * dr[j] / r3, u, &mut d2k);

            let mut d2x = curv.d2x(i, j).to_vec();
            axpy(step.eps, &d2k, &mut d2x);
            axpy(deps[j], &gain.dk[i], &mut d2x);
            axpy(deps[i], &gain.dk[j], &mut d2x);
            axpy(d2eps[k], &step.gain, &mut d2x);

            let mut d2v = curv.d2v(i, j).clone();
            d2v.add_outer(-1.0, &d2k, u);
            d2v.add_outer(-1.0, &gain.dk[i], &gain.du[j]);
            d2v.add_outer(-1.0, &gain.dk[j], &gain.du[i]);
            d2v.add_outer(-1.0, &step.gain, &d2u);
            d2v.symmetrize();

            out.d2x.push(d2x);
            out.d2v.push(d2v);
        }
    }
    Ok(out)
}

/// `ℓ(θ)` and, depending on `order`, `∇ℓ` and `∇²ℓ` in one forward pass.
pub fn evaluate<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    order: Order,
) -> Result<DerivativeReport> {
    evaluate_with(spec, theta, y, init, order.into())
}

/// [`evaluate`] with trace retention control.
pub fn evaluate_with<M: ModelSpec + ?Sized>(
    spec: &M,
    theta: &[f64],
    y: &[f64],
    init: &InitialCondition,
    opts: EvalOptions,
) -> Result<DerivativeReport> {
    spec.check_theta(theta)?;
    let order = opts.order;
    let (sm, db) = if order == Order::Value {
        let sm = spec.realize(theta)?;
        let db = DerivativeBundle::zeros(theta.len(), sm.state_dim(), sm.noise_dim());
        (sm, db)
    } else {
        spec.build(theta)?
    };
    crate::model::validate_dimensions(&sm, &db)?;
    evaluate_system(&sm, &db, y, init, opts)
}

/// [`evaluate_with`] for an already realized system and bundle.
pub fn evaluate_system(
    sm: &SystemMatrices,
    db: &DerivativeBundle,
    y: &[f64],
    init: &InitialCondition,
    opts: EvalOptions,
) -> Result<DerivativeReport> {
    let order = opts.order;
    let p = db.param_count();
    let m = sm.state_dim();
    let mut acc = LikelihoodAccumulator::new(p, order);
    let mut sens = SensitivityState::zeros(p, m);
    let mut curv = CurvatureState::zeros(p, m);
    let mut deps_trace = Vec::new();
    let mut dr_trace = Vec::new();

    let summary = filter_with(sm, y, init, |n, x_prev, v_prev, step| {
        if order == Order::Value {
            return Ok(());
        }
        let sens_pred = predict_sensitivities(&sens, x_prev, v_prev, sm, db)?;
        let curv_pred = if order >= Order::Hessian {
            Some(predict_curvatures(&curv, &sens, x_prev, v_prev, sm, db)?)
        } else {
            None
        };
        let (deps, dr) = innovation_sensitivities(&sens_pred, &step.x_pred, &step.v_pred, sm, db)?;
        if let Some(i) = deps.iter().zip(&dr).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::NonFiniteDerivative { n, i, j: i });
        }
        let (sens_filt, gain) = update_sensitivities(&sens_pred, step, &deps, &dr, sm, db)?;
        acc.push_first(step.eps, step.r, &deps, &dr);

        if let Some(curv_pred) = curv_pred {
            let (d2eps, d2r) = innovation_curvatures(&curv_pred, &sens_pred, &step.x_pred, &step.v_pred, sm, db)?;
            if let Some(k) = d2eps.iter().zip(&d2r).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
                let (i, j) = unpack_pair(p, k);
                return Err(Error::NonFiniteDerivative { n, i, j });
            }
            curv = update_curvatures(&curv_pred, &sens_pred, &gain, step, &deps, &dr, &d2eps, &d2r, sm, db)?;
            acc.push_second(step.eps, step.r, &deps, &dr, &d2eps, &d2r);
        }
        sens = sens_filt;
        if opts.keep_traces {
            deps_trace.push(deps);
            dr_trace.push(dr);
        }
        Ok(())
    })?;

    let n = summary.n_obs;
    let mut report = DerivativeReport {
        loglik: summary.loglik,
        sigma2: summary.sigma2,
        n_obs: n,
        grad: None,
        hessian: None,
        dsigma2: None,
        d2sigma2: None,
        eps_trace: summary.eps_trace,
        r_trace: summary.r_trace,
        deps_trace: None,
        dr_trace: None,
    };
    if order >= Order::Gradient {
        let (dsigma2, grad) = acc.gradient(summary.sigma2, n);
        if order >= Order::Hessian {
            let (d2s, hess) = acc.hessian(summary.sigma2, n, &dsigma2);
            report.d2sigma2 = Some(d2s);
            report.hessian = Some(hess);
        }
        report.dsigma2 = Some(dsigma2);
        report.grad = Some(grad);
        if opts.keep_traces {
            report.deps_trace = Some(deps_trace);
            report.dr_trace = Some(dr_trace);
        }
    }
    Ok(report)
}

fn unpack_pair(p: usize, k: usize) -> (usize, usize) {
    for i in 0..p {
        for j in i..p {
            if pair_index(p, i, j) == k {
                return (i, j);
            }
        }
    }
    (0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{predict, update};
    use crate::models::{SeasonalArSpec, TrendSpec};
    use approx::assert_relative_eq;

    fn scalar_trend(q: f64) -> (SystemMatrices, DerivativeBundle) {
        TrendSpec::new(1).unwrap().build(&[crate::math::ln(q)]).unwrap()
    }

    #[test]
    fn zero_bundle_prediction_reduces_to_transition() {
        let spec = SeasonalArSpec::new(4, 2, 1.0).unwrap();
        let sm = spec.realize(&[-1.0, -2.0, -0.5, 0.3, -0.2]).unwrap();
        let m = sm.state_dim();
        let db = DerivativeBundle::zeros(2, m, 3);
        let mut prev = SensitivityState::zeros(2, m);
        prev.dx[1] = (0..m).map(|v| v as f64 * 0.1).collect();
        prev.dv[1] = Matrix::identity(m);
        let x = vec![1.0; m];
        let v = Matrix::identity(m);
        let out = predict_sensitivities(&prev, &x, &v, &sm, &db).unwrap();
        assert_eq!(out.dx[1], sm.f.mul_vec(&prev.dx[1]));
        let mut want = sm.f.congruence(&prev.dv[1]);
        want.symmetrize();
        assert_eq!(out.dv[1], want);
        assert!(out.dv[0].is_zero());
    }

    #[test]
    fn scalar_trend_prediction() {
        let (sm, db) = scalar_trend(0.3);
        let mut prev = SensitivityState::zeros(1, 1);
        prev.dv[0][(0, 0)] = 0.7;
        let out = predict_sensitivities(&prev, &[0.0], &Matrix::identity(1), &sm, &db).unwrap();
        assert_relative_eq!(out.dv[0][(0, 0)], 0.7 + 0.3, epsilon = 1e-15);
    }

    #[test]
    fn innovation_trend_reduction() {
        let (sm, db) = scalar_trend(0.3);
        let zero = SensitivityState::zeros(1, 1);
        assert_eq!(innovation_sensitivities(&zero, &[1.0], &Matrix::identity(1), &sm, &db).unwrap(), (vec![0.0], vec![0.0]));
        let mut s = SensitivityState::zeros(1, 1);
        s.dx[0] = vec![0.4];
        s.dv[0][(0, 0)] = 1.3;
        let (de, dr) = innovation_sensitivities(&s, &[1.0], &Matrix::identity(1), &sm, &db).unwrap();
        assert_eq!(de, vec![-0.4]);
        assert_eq!(dr, vec![1.3]);
    }

    #[test]
    fn gain_derivative_hand_evaluation() {
        // V⁻ = 1, r = 2, ∂V⁻ = 1, ε = 1 ⇒ ∂K = 1/2 − 1·1/4 = 0.25
        let (sm, db) = scalar_trend(1.0);
        let step = update(vec![0.0], Matrix::identity(1), 1.0, &sm).unwrap();
        assert_eq!((step.r, step.eps), (2.0, 1.0));
        let mut s = SensitivityState::zeros(1, 1);
        s.dx[0] = vec![0.2];
        s.dv[0][(0, 0)] = 1.0;
        let (deps, dr) = innovation_sensitivities(&s, &step.x_pred, &step.v_pred, &sm, &db).unwrap();
        assert_eq!(dr, vec![1.0]);
        let (out, gain) = update_sensitivities(&s, &step, &deps, &dr, &sm, &db).unwrap();
        assert_relative_eq!(gain.dk[0][0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(out.dx[0][0], 0.2 + 0.5 * deps[0] + 0.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_sensitivity_update_with_zero_innovation() {
        let (sm, db) = scalar_trend(1.0);
        let step = update(vec![2.0], Matrix::identity(1), 2.0, &sm).unwrap();
        let s = SensitivityState::zeros(1, 1);
        let (out, _) = update_sensitivities(&s, &step, &[0.0], &[0.0], &sm, &db).unwrap();
        assert_eq!(out.dx[0], vec![0.0]);
    }

    #[test]
    fn single_step_gradient_hand_evaluation() {
        let (sigma2, dsigma2, grad) = sigma2_and_gradient(&[1.0], &[1.0], &[vec![1.0]], &[vec![0.0]], 1).unwrap();
        assert_eq!(sigma2, 1.0);
        assert_eq!(dsigma2, vec![2.0]);
        assert_eq!(grad, vec![-1.0]);
        let (_, _, grad) = sigma2_and_gradient(&[1.0, -0.5], &[1.0, 2.0], &[vec![0.0], vec![0.0]], &[vec![0.0], vec![0.0]], 2).unwrap();
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn curvature_prediction_from_rest() {
        let (sm, db) = scalar_trend(0.3);
        let curv = CurvatureState::zeros(1, 1);
        let sens = SensitivityState::zeros(1, 1);
        let out = predict_curvatures(&curv, &sens, &[0.0], &Matrix::zeros(1, 1), &sm, &db).unwrap();
        assert_relative_eq!(out.d2v(0, 0)[(0, 0)], 0.3, epsilon = 1e-16);
        assert_eq!(out.d2x(0, 0), &[0.0]);
    }

    #[test]
    fn gain_second_derivative_hand_evaluation() {
        // V⁻ = 1, r = 2, ∂u = ∂V = 1, ∂r = 1, ∂²V = ∂²r = 0
        // ⇒ ∂²K = −(1·1 + 1·1)/4 + 2·1·1·1/8 = −0.25
        let (sm, _) = scalar_trend(1.0);
        let db = DerivativeBundle::zeros(1, 1, 1);
        let step = update(vec![0.0], Matrix::identity(1), 1.0, &sm).unwrap();
        let mut sens = SensitivityState::zeros(1, 1);
        sens.dv[0][(0, 0)] = 1.0;
        let (_, gain) = update_sensitivities(&sens, &step, &[0.0], &[1.0], &sm, &db).unwrap();
        let curv = CurvatureState::zeros(1, 1);
        let out = update_curvatures(&curv, &sens, &gain, &step, &[0.0], &[1.0], &[0.0], &[0.0], &sm, &db).unwrap();
        // ∂²x⁺ = ∂²K ε with ε = 1
        assert_relative_eq!(out.d2x(0, 0)[0], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_second_order_inputs_propagate_prediction() {
        let (sm, db) = scalar_trend(1.0);
        let step = update(vec![0.0], Matrix::identity(1), 0.5, &sm).unwrap();
        let sens = SensitivityState::zeros(1, 1);
        let (_, gain) = update_sensitivities(&sens, &step, &[0.0], &[0.0], &sm, &db).unwrap();
        let mut curv = CurvatureState::zeros(1, 1);
        curv.d2x[0] = vec![0.7];
        let out = update_curvatures(&curv, &sens, &gain, &step, &[0.0], &[0.0], &[0.0], &[0.0], &sm, &db).unwrap();
        assert_eq!(out.d2x(0, 0), &[0.7]);
    }

    #[test]
    fn value_order_matches_filter_bitwise() {
        let spec = SeasonalArSpec::new(4, 2, 1.0).unwrap();
        let theta = [-1.0, -3.0, -0.5, 0.4, -0.2];
        let y: Vec<f64> = (0..40).map(|t| libm::sin(t as f64 * 0.7) + 0.01 * t as f64).collect();
        let init = InitialCondition::default();
        let (_, s) = crate::kalman::run_filter(&spec, &theta, &y, &init).unwrap();
        for order in [Order::Value, Order::Gradient, Order::Hessian] {
            let rep = evaluate(&spec, &theta, &y, &init, order).unwrap();
            assert_eq!(rep.loglik.to_bits(), s.loglik.to_bits());
            assert_eq!(rep.sigma2.to_bits(), s.sigma2.to_bits());
            assert_eq!(rep.grad.is_some(), order >= Order::Gradient);
            assert_eq!(rep.hessian.is_some(), order >= Order::Hessian);
        }
    }

    #[test]
    fn one_predict_step_matches_central_difference() {
        let spec = SeasonalArSpec::new(3, 2, 1.0).unwrap();
        let theta = [-1.0, -2.0, 0.3, 0.6, -0.4];
        let m = spec.state_dim();
        let x: Vec<f64> = (0..m).map(|v| 0.3 * v as f64 - 0.5).collect();
        let mut v = Matrix::identity(m);
        v[(0, 1)] = 0.2;
        v[(1, 0)] = 0.2;
        let (sm, db) = spec.build(&theta).unwrap();
        let sens = predict_sensitivities(&SensitivityState::zeros(5, m), &x, &v, &sm, &db).unwrap();
        let h = 1e-5;
        for i in 0..5 {
            let mut tp = theta;
            let mut tm = theta;
            tp[i] += h;
            tm[i] -= h;
            let (xp, vp) = predict(&x, &v, &spec.realize(&tp).unwrap()).unwrap();
            let (xm, vm) = predict(&x, &v, &spec.realize(&tm).unwrap()).unwrap();
            for a in 0..m {
                let fd = (xp[a] - xm[a]) / (2.0 * h);
                assert!((fd - sens.dx[i][a]).abs() <= 1e-6 * fd.abs().max(1.0));
                for b in 0..m {
                    let fd = (vp[(a, b)] - vm[(a, b)]) / (2.0 * h);
                    assert!((fd - sens.dv[i][(a, b)]).abs() <= 1e-6 * fd.abs().max(1.0));
                }
            }
        }
    }
}
