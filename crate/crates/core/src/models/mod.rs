//! Trend, seasonal-adjustment and seasonal-plus-AR models.
//!
//! Variances enter as `θ = log τ²`. AR coefficients are parameterized by
//! partial autocorrelations `β_j = C tanh(θ_j / 2)`, expanded with the
//! Levinson order recursion, so every finite `θ` gives a stationary AR part.
//!
//! State layout, top to bottom: trend block (`T_n`, `T_{n-1}` for order 2),
//! seasonal block (`S_n … S_{n-P+2}`), AR block (`p_n … p_{n-M+1}`).

mod levinson;
mod transform;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use levinson::{levinson_expand, levinson_hessian, levinson_jacobian, levinson_with_derivatives};
pub use transform::{log_variance_inverse, log_variance_transform, parcor_inverse, parcor_transform};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Component, DerivativeBundle, ModelSpec, NaturalParam, ParamVector, SystemMatrices};

/// Default PARCOR bound `C`.
pub const DEFAULT_PARCOR_BOUND: f64 = 1.0;

/// Default starting value `log 0.5` for a single variance parameter.
pub const DEFAULT_LOG_VARIANCE_START: f64 = -core::f64::consts::LN_2;

/// Default starts for the trend and seasonal variances of the seasonal
/// models.
pub const DEFAULT_SEASONAL_START: [f64; 2] = [-5.3, -5.0];

/// Placement of the trend, seasonal and AR blocks in the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    trend_order: usize,
    period: Option<usize>,
    ar_order: usize,
}

impl Layout {
    fn seasonal_start(&self) -> usize {
        self.trend_order
    }

    fn seasonal_len(&self) -> usize {
        self.period.map_or(0, |p| p - 1)
    }

    fn ar_start(&self) -> usize {
        self.seasonal_start() + self.seasonal_len()
    }

    fn state_dim(&self) -> usize {
        self.ar_start() + self.ar_order
    }

    fn noise_dim(&self) -> usize {
        1 + usize::from(self.period.is_some()) + usize::from(self.ar_order > 0)
    }

    /// `F` with the AR row filled from `ar`.
    fn transition(&self, ar: &[f64]) -> Matrix {
        let m = self.state_dim();
        let mut f = Matrix::zeros(m, m);
        match self.trend_order {
            1 => f[(0, 0)] = 1.0,
            _ => {
                f[(0, 0)] = 2.0;
                f[(0, 1)] = -1.0;
                f[(1, 0)] = 1.0;
            }
        }
        let s0 = self.seasonal_start();
        let sl = self.seasonal_len();
        for c in 0..sl {
            f[(s0, s0 + c)] = -1.0;
        }
        for r in 1..sl {
            f[(s0 + r, s0 + r - 1)] = 1.0;
        }
        let a0 = self.ar_start();
        for (c, &a) in ar.iter().enumerate() {
            f[(a0, a0 + c)] = a;
        }
        for r in 1..self.ar_order {
            f[(a0 + r, a0 + r - 1)] = 1.0;
        }
        f
    }

    fn noise_loading(&self) -> Matrix {
        let mut g = Matrix::zeros(self.state_dim(), self.noise_dim());
        g[(0, 0)] = 1.0;
        let mut col = 1;
        if self.period.is_some() {
            g[(self.seasonal_start(), col)] = 1.0;
            col += 1;
        }
        if self.ar_order > 0 {
            g[(self.ar_start(), col)] = 1.0;
        }
        g
    }

    fn observation(&self) -> Matrix {
        let mut h = Matrix::zeros(1, self.state_dim());
        h[(0, 0)] = 1.0;
        if self.period.is_some() {
            h[(0, self.seasonal_start())] = 1.0;
        }
        if self.ar_order > 0 {
            h[(0, self.ar_start())] = 1.0;
        }
        h
    }

    /// A `k×k` matrix with a single diagonal entry.
    fn diag_unit(&self, axis: usize, value: f64) -> Matrix {
        let k = self.noise_dim();
        let mut q = Matrix::zeros(k, k);
        q[(axis, axis)] = value;
        q
    }

    /// AR-row-only `m×m` matrix.
    fn ar_row(&self, row: &[f64]) -> Matrix {
        let m = self.state_dim();
        let mut d = Matrix::zeros(m, m);
        let a0 = self.ar_start();
        for (c, &v) in row.iter().enumerate() {
            d[(a0, a0 + c)] = v;
        }
        d
    }
}

/// Variances `τ²_i = e^{θ_i}` for the leading `k` parameters, with
/// their `Q` derivatives written into `db`.
fn variance_block(layout: &Layout, theta: &[f64], db: Option<&mut DerivativeBundle>) -> Result<Matrix> {
    let k = layout.noise_dim();
    let mut diag = Vec::with_capacity(k);
    for &t in &theta[..k] {
        diag.push(log_variance_transform(t)?.0);
    }
    if let Some(db) = db {
        for (axis, &tau2) in diag.iter().enumerate() {
            let d = layout.diag_unit(axis, tau2);
            db.set_first(Component::Q, axis, d.clone());
            db.set_second(Component::Q, axis, axis, d);
        }
    }
    Ok(Matrix::from_diagonal(&diag))
}

/// Local polynomial trend of order 1 (random walk) or 2 (integrated random
/// walk), `(1 − B)^k T_n = v_n`. One parameter, `θ = log τ²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrendSpec {
    order: usize,
}

impl TrendSpec {
    pub fn new(order: usize) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::InvalidConfig(format!("trend order must be 1 or 2, got {order}")));
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn layout(&self) -> Layout {
        Layout {
            trend_order: self.order,
            period: None,
            ar_order: 0,
        }
    }

    pub fn default_start(&self) -> Vec<f64> {
        vec![DEFAULT_LOG_VARIANCE_START]
    }

    /// `θ` from `[τ²]`.
    pub fn encode(&self, natural: &[f64]) -> Result<ParamVector> {
        encode_variances(natural, 1)
    }
}

fn encode_variances(natural: &[f64], count: usize) -> Result<ParamVector> {
    if natural.len() != count {
        return Err(Error::mismatch("natural parameters", (count, 1), (natural.len(), 1)));
    }
    ParamVector::new(natural.iter().map(|&v| log_variance_inverse(v)).collect::<Result<_>>()?)
}

fn structural_system(layout: &Layout, ar: &[f64], q: Matrix) -> Result<SystemMatrices> {
    SystemMatrices::new(layout.transition(ar), layout.noise_loading(), layout.observation(), q)
}

impl ModelSpec for TrendSpec {
    fn param_count(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        self.order
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn realize(&self, theta: &[f64]) -> Result<SystemMatrices> {
        self.check_theta(theta)?;
        let layout = self.layout();
        structural_system(&layout, &[], variance_block(&layout, theta, None)?)
    }

    fn differentiate(&self, theta: &[f64]) -> Result<DerivativeBundle> {
        self.build(theta).map(|(_, db)| db)
    }

    fn build(&self, theta: &[f64]) -> Result<(SystemMatrices, DerivativeBundle)> {
        self.check_theta(theta)?;
        let layout = self.layout();
        let mut db = DerivativeBundle::zeros(1, layout.state_dim(), 1);
        let q = variance_block(&layout, theta, Some(&mut db))?;
        Ok((structural_system(&layout, &[], q)?, db))
    }

    fn describe(&self, theta: &[f64]) -> Result<Vec<NaturalParam>> {
        self.check_theta(theta)?;
        Ok(vec![NaturalParam::new("tau2", log_variance_transform(theta[0])?.0)])
    }
}

/// Second-order trend plus a seasonal-sum component of period `P`.
/// Parameters `(log τ₁², log τ₂²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeasonalSpec {
    period: usize,
}

impl SeasonalSpec {
    pub const TREND_ORDER: usize = 2;

    pub fn new(period: usize) -> Result<Self> {
        if period < 2 {
            return Err(Error::InvalidConfig(format!("season length must be at least 2, got {period}")));
        }
        Ok(Self { period })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    fn layout(&self) -> Layout {
        Layout {
            trend_order: Self::TREND_ORDER,
            period: Some(self.period),
            ar_order: 0,
        }
    }

    pub fn default_start(&self) -> Vec<f64> {
        DEFAULT_SEASONAL_START.to_vec()
    }

    /// `θ` from `[τ₁², τ₂²]`.
    pub fn encode(&self, natural: &[f64]) -> Result<ParamVector> {
        encode_variances(natural, 2)
    }
}

impl ModelSpec for SeasonalSpec {
    fn param_count(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        self.layout().state_dim()
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn realize(&self, theta: &[f64]) -> Result<SystemMatrices> {
        self.check_theta(theta)?;
        let layout = self.layout();
        structural_system(&layout, &[], variance_block(&layout, theta, None)?)
    }

    fn differentiate(&self, theta: &[f64]) -> Result<DerivativeBundle> {
        self.build(theta).map(|(_, db)| db)
    }

    fn build(&self, theta: &[f64]) -> Result<(SystemMatrices, DerivativeBundle)> {
        self.check_theta(theta)?;
        let layout = self.layout();
        let mut db = DerivativeBundle::zeros(2, layout.state_dim(), 2);
        let q = variance_block(&layout, theta, Some(&mut db))?;
        Ok((structural_system(&layout, &[], q)?, db))
    }

    fn describe(&self, theta: &[f64]) -> Result<Vec<NaturalParam>> {
        self.check_theta(theta)?;
        Ok(vec![
            NaturalParam::new("tau2_trend", log_variance_transform(theta[0])?.0),
            NaturalParam::new("tau2_seasonal", log_variance_transform(theta[1])?.0),
        ])
    }
}

/// Seasonal model plus a stationary AR(`M`) component. Parameters
/// `(log τ₁², log τ₂², log τ₃², θ_4 … θ_{3+M})`, the last `M` mapping to
/// PARCORs bounded by `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeasonalArSpec {
    period: usize,
    ar_order: usize,
    parcor_bound: f64,
}

impl SeasonalArSpec {
    pub fn new(period: usize, ar_order: usize, parcor_bound: f64) -> Result<Self> {
        if period < 2 {
            return Err(Error::InvalidConfig(format!("season length must be at least 2, got {period}")));
        }
        if ar_order < 1 {
            return Err(Error::InvalidConfig("AR order must be at least 1".into()));
        }
        if !(parcor_bound > 0.0 && parcor_bound <= 1.0) {
            return Err(Error::InvalidConfig(format!("PARCOR bound must lie in (0, 1], got {parcor_bound}")));
        }
        Ok(Self {
            period,
            ar_order,
            parcor_bound,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn ar_order(&self) -> usize {
        self.ar_order
    }

    pub fn parcor_bound(&self) -> f64 {
        self.parcor_bound
    }

    /// Row index of the AR coefficients in `F`.
    pub fn ar_row(&self) -> usize {
        self.layout().ar_start()
    }

    fn layout(&self) -> Layout {
        Layout {
            trend_order: SeasonalSpec::TREND_ORDER,
            period: Some(self.period),
            ar_order: self.ar_order,
        }
    }

    pub fn default_start(&self) -> Vec<f64> {
        let mut t = DEFAULT_SEASONAL_START.to_vec();
        t.push(DEFAULT_LOG_VARIANCE_START);
        t.extend(core::iter::repeat_n(0.0, self.ar_order));
        t
    }

    /// PARCORs `β` and their first/second `θ` derivatives.
    pub fn parcors(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut beta = Vec::with_capacity(self.ar_order);
        let mut d1 = Vec::with_capacity(self.ar_order);
        let mut d2 = Vec::with_capacity(self.ar_order);
        for &t in &theta[3..3 + self.ar_order] {
            let (b, c, d) = parcor_transform(t, self.parcor_bound);
            beta.push(b);
            d1.push(c);
            d2.push(d);
        }
        (beta, d1, d2)
    }

    /// AR coefficients `a_1 … a_M` at `θ`.
    pub fn ar_coefficients(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(levinson_expand(&self.parcors(theta).0))
    }

    /// `θ` from `[τ₁², τ₂², τ₃², β_1 … β_M]`.
    pub fn encode(&self, natural: &[f64]) -> Result<ParamVector> {
        let p = self.param_count();
        if natural.len() != p {
            return Err(Error::mismatch("natural parameters", (p, 1), (natural.len(), 1)));
        }
        let mut theta = encode_variances(&natural[..3], 3)?.into_inner();
        for &b in &natural[3..] {
            theta.push(parcor_inverse(b, self.parcor_bound)?);
        }
        ParamVector::new(theta)
    }
}

impl ModelSpec for SeasonalArSpec {
    fn param_count(&self) -> usize {
        3 + self.ar_order
    }

    fn state_dim(&self) -> usize {
        self.layout().state_dim()
    }

    fn noise_dim(&self) -> usize {
        3
    }

    fn realize(&self, theta: &[f64]) -> Result<SystemMatrices> {
        self.check_theta(theta)?;
        let layout = self.layout();
        let ar = levinson_expand(&self.parcors(theta).0);
        structural_system(&layout, &ar, variance_block(&layout, theta, None)?)
    }

    fn differentiate(&self, theta: &[f64]) -> Result<DerivativeBundle> {
        self.build(theta).map(|(_, db)| db)
    }

    fn build(&self, theta: &[f64]) -> Result<(SystemMatrices, DerivativeBundle)> {
        self.check_theta(theta)?;
        let layout = self.layout();
        let order = self.ar_order;
        let mut db = DerivativeBundle::zeros(self.param_count(), layout.state_dim(), 3);
        let q = variance_block(&layout, theta, Some(&mut db))?;

        let (beta, c, d) = self.parcors(theta);
        let (ar, jac, hess) = levinson_with_derivatives(&beta);
        // ∂a_q/∂θ_{3+i} = J[q][i] C_i
        for i in 0..order {
            let row: Vec<f64> = (0..order).map(|q| jac[q][i] * c[i]).collect();
            db.set_first(Component::F, 3 + i, layout.ar_row(&row));
        }
        // ∂²a_q/∂θ_{3+i}∂θ_{3+j} = T[q][i][j] C_i C_j + δ_ij J[q][i] D_i
        for i in 0..order {
            for j in i..order {
                let row: Vec<f64> = (0..order)
                    .map(|q| {
                        let mut v = hess[q][i][j] * c[i] * c[j];
                        if i == j {
                            v += jac[q][i] * d[i];
                        }
                        v
                    })
                    .collect();
                db.set_second(Component::F, 3 + i, 3 + j, layout.ar_row(&row));
            }
        }
        Ok((structural_system(&layout, &ar, q)?, db))
    }

    fn describe(&self, theta: &[f64]) -> Result<Vec<NaturalParam>> {
        self.check_theta(theta)?;
        let mut out = vec![
            NaturalParam::new("tau2_trend", log_variance_transform(theta[0])?.0),
            NaturalParam::new("tau2_seasonal", log_variance_transform(theta[1])?.0),
            NaturalParam::new("tau2_ar", log_variance_transform(theta[2])?.0),
        ];
        let beta = self.parcors(theta).0;
        for (j, &b) in beta.iter().enumerate() {
            out.push(NaturalParam::new(format!("parcor_{}", j + 1), b));
        }
        for (j, a) in levinson_expand(&beta).into_iter().enumerate() {
            out.push(NaturalParam::new(format!("ar_{}", j + 1), a));
        }
        Ok(out)
    }
}

/// Any of the three model families, for callers that pick one at runtime.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "kebab-case"))]
pub enum StructuralModel {
    Trend(TrendSpec),
    Seasonal(SeasonalSpec),
    SeasonalAr(SeasonalArSpec),
}

impl StructuralModel {
    fn inner(&self) -> &dyn ModelSpec {
        match self {
            StructuralModel::Trend(s) => s,
            StructuralModel::Seasonal(s) => s,
            StructuralModel::SeasonalAr(s) => s,
        }
    }

    pub fn default_start(&self) -> Vec<f64> {
        match self {
            StructuralModel::Trend(s) => s.default_start(),
            StructuralModel::Seasonal(s) => s.default_start(),
            StructuralModel::SeasonalAr(s) => s.default_start(),
        }
    }

    /// `θ` from the invertible natural parameters (the leading `p` entries
    /// of [`ModelSpec::describe`]).
    pub fn encode(&self, natural: &[f64]) -> Result<ParamVector> {
        match self {
            StructuralModel::Trend(s) => s.encode(natural),
            StructuralModel::Seasonal(s) => s.encode(natural),
            StructuralModel::SeasonalAr(s) => s.encode(natural),
        }
    }

    /// Short human-readable descriptor such as `seasonal-ar(period=12, ar=2)`.
    pub fn label(&self) -> String {
        match self {
            StructuralModel::Trend(s) => format!("trend(order={})", s.order()),
            StructuralModel::Seasonal(s) => format!("seasonal(period={})", s.period()),
            StructuralModel::SeasonalAr(s) => format!(
                "seasonal-ar(period={}, ar={}, bound={})",
                s.period(),
                s.ar_order(),
                s.parcor_bound()
            ),
        }
    }
}

impl ModelSpec for StructuralModel {
    fn param_count(&self) -> usize {
        self.inner().param_count()
    }
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner().noise_dim()
    }
    fn realize(&self, theta: &[f64]) -> Result<SystemMatrices> {
        self.inner().realize(theta)
    }
    fn differentiate(&self, theta: &[f64]) -> Result<DerivativeBundle> {
        self.inner().differentiate(theta)
    }
    fn describe(&self, theta: &[f64]) -> Result<Vec<NaturalParam>> {
        self.inner().describe(theta)
    }
    fn build(&self, theta: &[f64]) -> Result<(SystemMatrices, DerivativeBundle)> {
        self.inner().build(theta)
    }
}

impl From<TrendSpec> for StructuralModel {
    fn from(s: TrendSpec) -> Self {
        StructuralModel::Trend(s)
    }
}

impl From<SeasonalSpec> for StructuralModel {
    fn from(s: SeasonalSpec) -> Self {
        StructuralModel::Seasonal(s)
    }
}

impl From<SeasonalArSpec> for StructuralModel {
    fn from(s: SeasonalArSpec) -> Self {
        StructuralModel::SeasonalAr(s)
    }
}
