//! Multitask estimators over a collection of per-instance regression datasets.
//!
//! The robust multitask estimator runs in two steps: per-instance OLS
//! estimates are combined coordinate-wise with a trimmed mean into a shared
//! center, then each instance is debiased by a LASSO penalized towards that
//! center. Independent, averaging, pooling and averaging-multitask estimators
//! are provided for comparison.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DesignMatrix, SymMatrix};
use crate::linreg::{
    lasso_fit_with, min_norm_lstsq, ols_fit, trimmed_mean, LassoOptions, TrimFraction,
    SINGULAR_TOLERANCE,
};
use crate::scalar::Scalar;

/// Regression data observed at one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset<T> {
    pub instance_id: usize,
    pub x: DesignMatrix<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> TaskDataset<T> {
    pub fn new(instance_id: usize, x: DesignMatrix<T>, y: Vec<T>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::InvalidInput(format!(
                "instance {instance_id}: {} design rows vs {} responses",
                x.rows(),
                y.len()
            )));
        }
        Ok(Self { instance_id, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

/// What Step 1 does with an instance whose OLS problem is singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    /// Propagate [`Error::SingularDesign`].
    #[default]
    Fail,
    /// Substitute the minimum-norm least squares solution.
    MinNorm,
    /// Leave the instance out of the trimmed mean; it is still debiased.
    Exclude,
}

/// Hyperparameters of the robust multitask estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorHyper<T> {
    pub lambdas: BTreeMap<usize, T>,
    pub omega: TrimFraction,
    /// Instances whose OLS estimate is kept out of the trimmed mean
    /// (e.g. a data-poor instance).
    pub exclude_from_trim: BTreeSet<usize>,
    pub singular: SingularPolicy,
    pub lasso: LassoOptions<T>,
}

impl<T: Scalar> EstimatorHyper<T> {
    pub fn new(lambdas: BTreeMap<usize, T>, omega: TrimFraction) -> Self {
        Self {
            lambdas,
            omega,
            exclude_from_trim: BTreeSet::new(),
            singular: SingularPolicy::Fail,
            lasso: LassoOptions::default(),
        }
    }

    /// Same `lambda` for every listed instance.
    pub fn uniform(ids: impl IntoIterator<Item = usize>, lambda: T, omega: TrimFraction) -> Self {
        Self::new(ids.into_iter().map(|id| (id, lambda)).collect(), omega)
    }

    pub fn excluding(mut self, ids: impl IntoIterator<Item = usize>) -> Self {
        self.exclude_from_trim.extend(ids);
        self
    }

    pub fn with_singular_policy(mut self, policy: SingularPolicy) -> Self {
        self.singular = policy;
        self
    }

    /// Regularization levels `sqrt(32 sigma_j^2 x_max^2 log(4d/delta) / n_j)`,
    /// with `delta = 0.05`.
    pub fn theoretical_lambdas(tasks: &[TaskDataset<T>], sigmas: &BTreeMap<usize, T>, x_max: T) -> BTreeMap<usize, T> {
        tasks
            .iter()
            .map(|t| {
                let sigma = sigmas.get(&t.instance_id).copied().unwrap_or_else(T::zero);
                (t.instance_id, theoretical_lambda(sigma, x_max, t.dim(), t.len(), 0.05))
            })
            .collect()
    }
}

/// `sqrt(32 sigma^2 x_max^2 log(4d/delta) / n)`.
pub fn theoretical_lambda<T: Scalar>(sigma: T, x_max: T, d: usize, n: usize, delta: f64) -> T {
    let log_term = T::of((4.0 * d as f64 / delta).ln());
    (T::of(32.0) * sigma * sigma * x_max * x_max * log_term / T::of_usize(n.max(1))).sqrt()
}

/// Solver and Step-1 bookkeeping returned with a multitask fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics<T> {
    /// Step-1 estimates per instance (`None` if excluded as singular or kept
    /// out of the trim).
    pub ols: BTreeMap<usize, Option<Vec<T>>>,
    pub omega: TrimFraction,
    /// Instances that entered the trimmed mean.
    pub trimmed_over: Vec<usize>,
    /// Estimates dropped from each tail.
    pub trim_count: usize,
    /// LASSO sweeps and final KKT residual per instance.
    pub lasso: BTreeMap<usize, (usize, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskFitResult<T> {
    pub per_instance: BTreeMap<usize, Vec<T>>,
    pub shared: Vec<T>,
    pub diagnostics: FitDiagnostics<T>,
}

fn common_dim<T: Scalar>(tasks: &[TaskDataset<T>]) -> Result<usize> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidInput("no tasks given".into()))?;
    let d = first.dim();
    let mut seen = BTreeSet::new();
    for t in tasks {
        if t.dim() != d {
            return Err(Error::InvalidInput(format!(
                "instance {} has dimension {}, expected {d}",
                t.instance_id,
                t.dim()
            )));
        }
        if !seen.insert(t.instance_id) {
            return Err(Error::InvalidInput(format!(
                "duplicate instance id {}",
                t.instance_id
            )));
        }
    }
    Ok(d)
}

/// Step-1 estimate for one task under `policy`. `Ok(None)` means excluded.
pub fn step_one_estimate<T: Scalar>(
    task: &TaskDataset<T>,
    policy: SingularPolicy,
) -> Result<Option<Vec<T>>> {
    match ols_fit(&task.x, &task.y) {
        Ok(b) => Ok(Some(b)),
        Err(e @ Error::SingularDesign { .. }) => match policy {
            SingularPolicy::Fail => Err(e.for_instance(task.instance_id)),
            SingularPolicy::MinNorm => min_norm_lstsq(&task.x, &task.y).map(Some),
            SingularPolicy::Exclude => Ok(None),
        },
        Err(e) => Err(e),
    }
}

/// Coordinate-wise trimmed mean of a set of estimates.
pub fn robust_center<T: Scalar>(estimates: &[&[T]], omega: TrimFraction) -> Result<Vec<T>> {
    let d = estimates
        .first()
        .map(|e| e.len())
        .ok_or_else(|| Error::InvalidTrim("no estimates left to trim".into()))?;
    let mut column = Vec::with_capacity(estimates.len());
    (0..d)
        .map(|i| {
            column.clear();
            column.extend(estimates.iter().map(|e| e[i]));
            trimmed_mean(&column, omega)
        })
        .collect()
}

/// Robust multitask estimator.
///
/// Step 1: OLS per task, then the coordinate-wise trimmed mean over tasks not
/// listed in `exclude_from_trim` gives the shared estimate. Step 2: for each
/// task, LASSO with its own `lambda` penalizing distance to the shared
/// estimate.
pub fn fit_robust_multitask<T: Scalar>(
    tasks: &[TaskDataset<T>],
    hyper: &EstimatorHyper<T>,
) -> Result<MultitaskFitResult<T>> {
    let d = common_dim(tasks)?;
    let mut ols = BTreeMap::new();
    for t in tasks {
        // Instances kept out of the trim never need their own OLS estimate.
        let est = if hyper.exclude_from_trim.contains(&t.instance_id) {
            None
        } else {
            step_one_estimate(t, hyper.singular)?
        };
        ols.insert(t.instance_id, est);
    }
    let trimmed_over: Vec<usize> = ols
        .iter()
        .filter(|(id, est)| est.is_some() && !hyper.exclude_from_trim.contains(id))
        .map(|(&id, _)| id)
        .collect();
    let pool: Vec<&[T]> = trimmed_over
        .iter()
        .map(|id| ols[id].as_deref().expect("filtered"))
        .collect();
    let shared = robust_center(&pool, hyper.omega)?;
    let trim_count = hyper.omega.trim_count(pool.len());
    drop(pool);
    debug_assert_eq!(shared.len(), d);

    let mut per_instance = BTreeMap::new();
    let mut lasso_diag = BTreeMap::new();
    for t in tasks {
        let lambda = *hyper.lambdas.get(&t.instance_id).ok_or_else(|| {
            Error::InvalidInput(format!("no lambda for instance {}", t.instance_id))
        })?;
        let fit = lasso_fit_with(&t.x, &t.y, lambda, &shared, &hyper.lasso)?;
        lasso_diag.insert(t.instance_id, (fit.sweeps, fit.kkt_residual));
        per_instance.insert(t.instance_id, fit.beta);
    }

    Ok(MultitaskFitResult {
        per_instance,
        shared,
        diagnostics: FitDiagnostics {
            ols,
            omega: hyper.omega,
            trim_count,
            trimmed_over,
            lasso: lasso_diag,
        },
    })
}

/// Per-task OLS with no sharing across tasks.
pub fn fit_independent<T: Scalar>(tasks: &[TaskDataset<T>]) -> Result<BTreeMap<usize, Vec<T>>> {
    common_dim(tasks)?;
    tasks
        .iter()
        .map(|t| {
            ols_fit(&t.x, &t.y)
                .map(|b| (t.instance_id, b))
                .map_err(|e| e.for_instance(t.instance_id))
        })
        .collect()
}

/// Arithmetic mean of the per-task OLS estimates.
pub fn fit_averaging<T: Scalar>(tasks: &[TaskDataset<T>]) -> Result<Vec<T>> {
    let d = common_dim(tasks)?;
    let ind = fit_independent(tasks)?;
    let n = T::of_usize(ind.len());
    let mut avg = vec![T::zero(); d];
    for b in ind.values() {
        for (a, &v) in avg.iter_mut().zip(b) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n);
    Ok(avg)
}

/// OLS on the data of all tasks pooled together.
pub fn fit_pooling<T: Scalar>(tasks: &[TaskDataset<T>]) -> Result<Vec<T>> {
    let d = common_dim(tasks)?;
    let mut gram = SymMatrix::zeros(d);
    let mut rhs = vec![T::zero(); d];
    let mut n = 0usize;
    for t in tasks {
        gram.add_assign(&t.x.gram());
        for (r, v) in rhs.iter_mut().zip(t.x.xt_vec(&t.y)) {
            *r += v;
        }
        n += t.len();
    }
    if n == 0 {
        return Err(Error::SingularDesign {
            instance: None,
            min_eigenvalue: 0.0,
        });
    }
    let inv_n = T::one() / T::of_usize(n);
    gram.scale(inv_n);
    rhs.iter_mut().for_each(|v| *v *= inv_n);
    let min_eig = gram.min_eigenvalue();
    if min_eig < T::of(SINGULAR_TOLERANCE) {
        return Err(Error::SingularDesign {
            instance: None,
            min_eigenvalue: min_eig.to_f64_lossy(),
        });
    }
    gram.cholesky_solve(&rhs).ok_or(Error::SingularDesign {
        instance: None,
        min_eigenvalue: min_eig.to_f64_lossy(),
    })
}

/// Two-step estimator with the plain mean in Step 1.
pub fn fit_averaging_multitask<T: Scalar>(
    tasks: &[TaskDataset<T>],
    lambdas: &BTreeMap<usize, T>,
) -> Result<MultitaskFitResult<T>> {
    fit_robust_multitask(tasks, &EstimatorHyper::new(lambdas.clone(), TrimFraction::ZERO))
}

/// Coordinates split by how many parameter vectors deviate from `shared`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub poor: BTreeSet<usize>,
    pub well: BTreeSet<usize>,
}

/// Absolute tolerance used by [`count_aligned`] to decide `a != b`.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-9;

/// Coordinate `i` is poorly aligned iff fewer than a `zeta` fraction of the
/// vectors differ from `shared` at `i`; otherwise it is well aligned.
pub fn count_aligned<T: Scalar>(betas: &[Vec<T>], shared: &[T], zeta: f64) -> Result<Alignment> {
    if betas.is_empty() {
        return Err(Error::InvalidInput("no parameter vectors".into()));
    }
    if !(zeta > 0.0) {
        return Err(Error::InvalidInput(format!("zeta must be positive, got {zeta}")));
    }
    let d = shared.len();
    if betas.iter().any(|b| b.len() != d) {
        return Err(Error::InvalidInput("parameter vectors differ in length".into()));
    }
    let tol = T::of(ALIGNMENT_TOLERANCE);
    let n = betas.len() as f64;
    let mut poor = BTreeSet::new();
    let mut well = BTreeSet::new();
    for i in 0..d {
        let deviating = betas.iter().filter(|b| (b[i] - shared[i]).abs() > tol).count();
        if (deviating as f64) / n < zeta {
            poor.insert(i);
        } else {
            well.insert(i);
        }
    }
    Ok(Alignment { poor, well })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: usize, rows: &[[f64; 2]], beta: [f64; 2]) -> TaskDataset<f64> {
        let x = DesignMatrix::from_rows(rows).unwrap();
        let y = x.mul_vec(&beta);
        TaskDataset::new(id, x, y).unwrap()
    }

    const ROWS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]];

    #[test]
    fn singular_policies() {
        let t = task(7, &[[1.0, 1.0]], [1.0, 1.0]);
        match step_one_estimate(&t, SingularPolicy::Fail) {
            Err(Error::SingularDesign { instance, .. }) => assert_eq!(instance, Some(7)),
            other => panic!("{other:?}"),
        }
        assert_eq!(step_one_estimate(&t, SingularPolicy::Exclude).unwrap(), None);
        let mn = step_one_estimate(&t, SingularPolicy::MinNorm).unwrap().unwrap();
        assert!((mn[0] - 1.0).abs() < 1e-12 && (mn[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn excluded_singular_tasks_are_still_debiased() {
        let tasks = vec![
            task(0, &ROWS, [1.0, 2.0]),
            task(1, &ROWS, [1.0, 2.0]),
            task(2, &[[1.0, 0.0]], [1.0, 2.0]),
        ];
        let hyper = EstimatorHyper::uniform(0..3, 0.01, TrimFraction::ZERO)
            .with_singular_policy(SingularPolicy::Exclude);
        let fit = fit_robust_multitask(&tasks, &hyper).unwrap();
        assert_eq!(fit.diagnostics.trimmed_over, vec![0, 1]);
        // Center is exact, single observation agrees with it: nothing to debias.
        let b2 = &fit.per_instance[&2];
        assert!((b2[0] - 1.0).abs() < 1e-9 && (b2[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let tasks = vec![task(0, &ROWS, [1.0, 2.0]), task(0, &ROWS, [1.0, 2.0])];
        assert!(fit_averaging(&tasks).is_err());
    }

    #[test]
    fn missing_lambda_rejected() {
        let tasks = vec![task(0, &ROWS, [1.0, 2.0]), task(1, &ROWS, [1.0, 2.0])];
        let hyper = EstimatorHyper::uniform([0], 0.1, TrimFraction::ZERO);
        assert!(matches!(
            fit_robust_multitask(&tasks, &hyper),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn excluding_everything_is_an_invalid_trim() {
        let tasks = vec![task(0, &ROWS, [1.0, 2.0])];
        let hyper = EstimatorHyper::uniform([0], 0.1, TrimFraction::ZERO).excluding([0]);
        assert!(matches!(
            fit_robust_multitask(&tasks, &hyper),
            Err(Error::InvalidTrim(_))
        ));
    }

    #[test]
    fn theoretical_lambda_formula() {
        let l: f64 = theoretical_lambda(0.05, 1.0, 20, 400, 0.05);
        let expect = (32.0 * 0.0025 * (1600.0f64).ln() / 400.0).sqrt();
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn count_aligned_rejects_bad_zeta() {
        assert!(count_aligned(&[vec![0.0]], &[0.0], 0.0).is_err());
        assert!(count_aligned(&[vec![0.0, 1.0]], &[0.0], 0.5).is_err());
    }
}
