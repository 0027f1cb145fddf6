//! Robust multitask estimation and batched multitask contextual bandits.
//!
//! The estimator layers ([`linreg`], [`multitask`], [`linalg`]) are generic
//! over the scalar type; the `*F64` aliases below name the common case. The
//! simulation layers ([`environment`], [`bandit`], [`pricing`]) work in `f64`.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod environment;
pub mod error;
pub mod linalg;
pub mod linreg;
pub mod multitask;
pub mod pricing;
pub mod rng;
pub mod scalar;
pub mod trace;

pub use error::{Error, Result};
pub use linreg::{lasso_fit, ols_fit, trimmed_mean, TrimFraction};
pub use multitask::{
    count_aligned, fit_averaging, fit_averaging_multitask, fit_independent, fit_pooling,
    fit_robust_multitask, EstimatorHyper, MultitaskFitResult, SingularPolicy, TaskDataset,
};
pub use scalar::Scalar;
pub use trace::{RegretTrace, TraceStep};

pub type DesignMatrixF64 = linalg::DesignMatrix<f64>;
pub type TaskDatasetF64 = multitask::TaskDataset<f64>;
pub type EstimatorHyperF64 = multitask::EstimatorHyper<f64>;
pub type MultitaskFitF64 = multitask::MultitaskFitResult<f64>;
