//! The contract a parameterized state-space model satisfies.
//!
//! A model maps a working parameter vector `θ` to the time-invariant system
//!
//! ```text
//! x_n = F x_{n-1} + G v_n,   v_n ~ N(0, Q)
//! y_n = H x_n + w_n,         w_n ~ N(0, R),  R = 1
//! ```
//!
//! together with the first and second derivatives of every system matrix
//! with respect to `θ`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Relative tolerance for the symmetry checks in [`validate_dimensions`].
const SYMMETRY_TOL: f64 = 1e-12;

/// `(F, G, H, Q, R)` at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub f: Matrix,
    pub g: Matrix,
    /// Observation row, `1×m`.
    pub h: Matrix,
    pub q: Matrix,
    pub r: f64,
}

impl SystemMatrices {
    /// Builds the system with `R = 1` and checks shapes.
    pub fn new(f: Matrix, g: Matrix, h: Matrix, q: Matrix) -> Result<Self> {
        let sm = Self { f, g, h, q, r: 1.0 };
        sm.check()?;
        Ok(sm)
    }

    pub fn state_dim(&self) -> usize {
        self.f.rows()
    }

    pub fn noise_dim(&self) -> usize {
        self.q.rows()
    }

    fn check(&self) -> Result<()> {
        let m = self.f.rows();
        let k = self.q.rows();
        expect_shape("F", &self.f, (m, m))?;
        expect_shape("G", &self.g, (m, k))?;
        expect_shape("H", &self.h, (1, m))?;
        expect_shape("Q", &self.q, (k, k))?;
        if self.r != 1.0 {
            return Err(Error::InvariantViolation("R = 1".into()));
        }
        if !symmetric(&self.q) {
            return Err(Error::InvariantViolation("Q symmetric".into()));
        }
        let scale = self.q.max_abs().max(f64::MIN_POSITIVE);
        let min_eig = crate::linalg::symmetric_eigenvalues(&self.q)
            .first()
            .copied()
            .unwrap_or(0.0);
        if min_eig < -1e-12 * scale {
            return Err(Error::InvariantViolation("Q positive semidefinite".into()));
        }
        Ok(())
    }
}

fn expect_shape(name: &str, m: &Matrix, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::mismatch(name, expected, m.shape()));
    }
    Ok(())
}

fn symmetric(m: &Matrix) -> bool {
    m.is_symmetric(SYMMETRY_TOL * m.max_abs().max(1.0))
}

/// Working parameters, all finite.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("parameter entries finite".into()));
        }
        Ok(Self(theta))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// The system matrices a derivative can be taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    F,
    G,
    H,
    Q,
    /// The observation variance, stored as a 1×1 matrix.
    R,
}

impl Component {
    pub const ALL: [Component; 5] = [Component::F, Component::G, Component::H, Component::Q, Component::R];

    pub fn name(self) -> &'static str {
        match self {
            Component::F => "F",
            Component::G => "G",
            Component::H => "H",
            Component::Q => "Q",
            Component::R => "R",
        }
    }
}

/// Derivatives of one system matrix. Absent entries are exact zeros.
#[derive(Debug, Clone, PartialEq)]
struct Slots {
    shape: (usize, usize),
    first: Vec<Option<Matrix>>,
    /// Upper triangle `i <= j`, packed row by row.
    second: Vec<Option<Matrix>>,
}

impl Slots {
    fn new(p: usize, shape: (usize, usize)) -> Self {
        Self {
            shape,
            first: vec![None; p],
            second: vec![None; p * (p + 1) / 2],
        }
    }
}

/// Index of `(i, j)` in packed upper-triangular storage of a `p×p`
/// symmetric table.
#[inline]
pub(crate) fn pair_index(p: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * p - a * (a + 1) / 2 + b
}

/// First and second parameter derivatives of `F, G, H, Q, R`.
///
/// Storage is sparse: only nonzero derivative matrices are held. Mixed
/// second derivatives are stored once per unordered pair, so
/// `second(c, i, j) == second(c, j, i)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    p: usize,
    slots: [Slots; 5],
}

impl DerivativeBundle {
    /// All-zero bundle for `p` parameters, state dimension `m` and noise
    /// dimension `k`.
    pub fn zeros(p: usize, m: usize, k: usize) -> Self {
        Self {
            p,
            slots: [
                Slots::new(p, (m, m)),
                Slots::new(p, (m, k)),
                Slots::new(p, (1, m)),
                Slots::new(p, (k, k)),
                Slots::new(p, (1, 1)),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.p
    }

    pub fn shape(&self, c: Component) -> (usize, usize) {
        self.slots[c as usize].shape
    }

    /// `∂c/∂θ_i`, or `None` when it is identically zero.
    #[inline]
    pub fn first(&self, c: Component, i: usize) -> Option<&Matrix> {
        self.slots[c as usize].first[i].as_ref()
    }

    /// `∂²c/∂θ_i∂θ_j`, or `None` when it is identically zero.
    #[inline]
    pub fn second(&self, c: Component, i: usize, j: usize) -> Option<&Matrix> {
        self.slots[c as usize].second[pair_index(self.p, i, j)].as_ref()
    }

    /// Dense read of `∂c/∂θ_i`.
    pub fn first_dense(&self, c: Component, i: usize) -> Matrix {
        let (r, k) = self.shape(c);
        self.first(c, i).cloned().unwrap_or_else(|| Matrix::zeros(r, k))
    }

    /// Dense read of `∂²c/∂θ_i∂θ_j`.
    pub fn second_dense(&self, c: Component, i: usize, j: usize) -> Matrix {
        let (r, k) = self.shape(c);
        self.second(c, i, j).cloned().unwrap_or_else(|| Matrix::zeros(r, k))
    }

    /// Stores `∂c/∂θ_i`. A zero matrix clears the slot.
    pub fn set_first(&mut self, c: Component, i: usize, value: Matrix) {
        self.slots[c as usize].first[i] = if value.is_zero() { None } else { Some(value) };
    }

    /// Stores `∂²c/∂θ_i∂θ_j` (and hence `∂²c/∂θ_j∂θ_i`).
    pub fn set_second(&mut self, c: Component, i: usize, j: usize, value: Matrix) {
        let idx = pair_index(self.p, i, j);
        self.slots[c as usize].second[idx] = if value.is_zero() { None } else { Some(value) };
    }

    /// True when no derivative slot of any component is populated.
    pub fn is_zero(&self) -> bool {
        self.slots
            .iter()
            .all(|s| s.first.iter().chain(&s.second).all(Option::is_none))
    }
}

/// Shorthand for [`DerivativeBundle::zeros`] that validates its arguments.
pub fn zero_bundle(p: usize, m: usize, k: usize) -> Result<DerivativeBundle> {
    if p == 0 || m == 0 || k == 0 {
        return Err(Error::InvalidConfig("p, m and k must be at least 1".into()));
    }
    Ok(DerivativeBundle::zeros(p, m, k))
}

/// Checks every shape and symmetry invariant of a system and its bundle.
pub fn validate_dimensions(sm: &SystemMatrices, db: &DerivativeBundle) -> Result<()> {
    sm.check()?;
    let m = sm.state_dim();
    let k = sm.noise_dim();
    let expected = [(m, m), (m, k), (1, m), (k, k), (1, 1)];
    for (c, shape) in Component::ALL.into_iter().zip(expected) {
        let name = c.name();
        if db.shape(c) != shape {
            return Err(Error::mismatch(&bundle_name("d", name), shape, db.shape(c)));
        }
        for i in 0..db.p {
            if let Some(d) = db.first(c, i) {
                expect_shape(&bundle_name("d", name), d, shape)?;
            }
            for j in i..db.p {
                if let Some(d) = db.second(c, i, j) {
                    expect_shape(&bundle_name("d2", name), d, shape)?;
                }
            }
        }
    }
    for i in 0..db.p {
        if let Some(dq) = db.first(Component::Q, i) {
            if !symmetric(dq) {
                return Err(Error::InvariantViolation("dQ symmetric".into()));
            }
        }
        for j in i..db.p {
            if let Some(d2q) = db.second(Component::Q, i, j) {
                if !symmetric(d2q) {
                    return Err(Error::InvariantViolation("d2Q symmetric".into()));
                }
            }
        }
    }
    Ok(())
}

fn bundle_name(prefix: &str, name: &str) -> String {
    let mut s = String::from(prefix);
    s.push_str(name);
    s
}

/// A labelled natural-scale parameter, such as a variance or AR coefficient.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NaturalParam {
    pub label: String,
    pub value: f64,
}

impl NaturalParam {
    pub fn new(label: impl Into<String>, value: f64) -> Self {
        Self {
            label: label.into(),
            value,
        }
    }
}

/// A state-space model family with `p` working parameters.
///
/// `realize` and `differentiate` must be deterministic in `θ`, and
/// implementations must be safe to call from several threads at once.
pub trait ModelSpec {
    fn param_count(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn realize(&self, theta: &[f64]) -> Result<SystemMatrices>;

    fn differentiate(&self, theta: &[f64]) -> Result<DerivativeBundle>;

    /// Natural parameters for reporting, e.g. variances and AR coefficients.
    fn describe(&self, theta: &[f64]) -> Result<Vec<NaturalParam>>;

    /// Both the system and its derivatives.
    fn build(&self, theta: &[f64]) -> Result<(SystemMatrices, DerivativeBundle)> {
        Ok((self.realize(theta)?, self.differentiate(theta)?))
    }

    /// Checks `θ` has the right length and finite entries.
    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::mismatch("theta", (self.param_count(), 1), (theta.len(), 1)));
        }
        if let Some(bad) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(alloc::format!("theta[{bad}] finite")));
        }
        Ok(())
    }
}

impl<M: ModelSpec + ?Sized> ModelSpec for &M {
    fn param_count(&self) -> usize {
        (**self).param_count()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn realize(&self, theta: &[f64]) -> Result<SystemMatrices> {
        (**self).realize(theta)
    }
    fn differentiate(&self, theta: &[f64]) -> Result<DerivativeBundle> {
        (**self).differentiate(theta)
    }
    fn describe(&self, theta: &[f64]) -> Result<Vec<NaturalParam>> {
        (**self).describe(theta)
    }
    fn build(&self, theta: &[f64]) -> Result<(SystemMatrices, DerivativeBundle)> {
        (**self).build(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local_level() -> SystemMatrices {
        SystemMatrices::new(
            Matrix::from_rows(&[&[2.0, -1.0], &[1.0, 0.0]]),
            Matrix::from_rows(&[&[1.0], &[0.0]]),
            Matrix::row_vector(&[1.0, 0.0]),
            Matrix::from_rows(&[&[0.3]]),
        )
        .unwrap()
    }

    #[test]
    fn consistent_shapes_validate() {
        let sm = local_level();
        let mut db = DerivativeBundle::zeros(1, 2, 1);
        db.set_first(Component::Q, 0, Matrix::from_rows(&[&[0.3]]));
        assert_eq!(validate_dimensions(&sm, &db), Ok(()));
    }

    #[test]
    fn wrong_g_is_reported() {
        let err = SystemMatrices::new(
            Matrix::identity(2),
            Matrix::zeros(3, 1),
            Matrix::row_vector(&[1.0, 0.0]),
            Matrix::from_rows(&[&[1.0]]),
        )
        .unwrap_err();
        assert_eq!(err, Error::mismatch("G", (2, 1), (3, 1)));
    }

    #[test]
    fn nonsymmetric_dq_is_rejected() {
        let sm = SystemMatrices::new(
            Matrix::identity(2),
            Matrix::identity(2),
            Matrix::row_vector(&[1.0, 0.0]),
            Matrix::identity(2),
        )
        .unwrap();
        let mut db = DerivativeBundle::zeros(1, 2, 2);
        db.set_first(Component::Q, 0, Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]));
        assert_eq!(
            validate_dimensions(&sm, &db),
            Err(Error::InvariantViolation("dQ symmetric".into()))
        );
    }

    #[test]
    fn zero_bundles_have_model_shapes() {
        for &(p, m, k) in &[(1, 1, 1), (2, 13, 2), (5, 16, 3)] {
            let db = zero_bundle(p, m, k).unwrap();
            assert!(db.is_zero());
            assert_eq!(db.first_dense(Component::F, p - 1), Matrix::zeros(m, m));
            assert_eq!(db.second_dense(Component::G, 0, p - 1), Matrix::zeros(m, k));
            assert_eq!(db.second_dense(Component::Q, p - 1, 0), Matrix::zeros(k, k));
            assert_eq!(db.first_dense(Component::R, 0), Matrix::zeros(1, 1));
        }
        assert!(zero_bundle(0, 1, 1).is_err());
    }

    #[test]
    fn mixed_partials_share_storage() {
        let mut db = DerivativeBundle::zeros(3, 2, 1);
        db.set_second(Component::F, 2, 0, Matrix::identity(2));
        assert_eq!(db.second(Component::F, 0, 2), Some(&Matrix::identity(2)));
        assert_eq!(db.second(Component::F, 2, 0), db.second(Component::F, 0, 2));
        assert!(db.second(Component::F, 1, 2).is_none());
    }

    #[test]
    fn pair_index_is_dense() {
        let p = 4;
        let mut seen = vec![false; p * (p + 1) / 2];
        for i in 0..p {
            for j in i..p {
                let idx = pair_index(p, i, j);
                assert!(!seen[idx]);
                seen[idx] = true;
                assert_eq!(idx, pair_index(p, j, i));
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn param_vector_rejects_nan() {
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
        assert_eq!(&*ParamVector::new(vec![1.0]).unwrap(), &[1.0]);
    }
}
