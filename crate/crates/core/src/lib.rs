//! Exact gradient and Hessian of the concentrated Gaussian log-likelihood of
//! linear state-space models.
//!
//! The observation noise variance is fixed at one and the scale is profiled
//! out, so a model with `p` working parameters needs derivatives only with
//! respect to those `p` parameters. First and second parameter derivatives of
//! the predicted and filtered state and covariance are propagated alongside
//! the Kalman filter ([`diff_filter`]), giving `∇ℓ` and `∇²ℓ` in one forward
//! pass.
//!
//! The crate is `no_std` and only needs `alloc`. IO, simulation and the
//! command-line front end live in the `diffkalman` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diff_filter;
pub mod error;
pub mod kalman;
pub mod linalg;
pub(crate) mod math;
pub mod model;
pub mod models;
pub mod optimize;
pub mod verify;

pub use diff_filter::{evaluate, DerivativeReport, Order};
pub use error::{Error, Result};
pub use kalman::{run_filter, FilterStep, InitialCondition, LikelihoodSummary};
pub use linalg::Matrix;
pub use model::{Component, DerivativeBundle, ModelSpec, NaturalParam, ParamVector, SystemMatrices};
pub use models::{SeasonalArSpec, SeasonalSpec, StructuralModel, TrendSpec};
pub use optimize::{maximize, multistart, Method, MultiStart, OptimResult, OptimizerConfig, Termination};
pub use verify::{compare, fd_gradient, fd_hessian, CompareOptions, ComparisonReport, FdConfig, Tolerances};
