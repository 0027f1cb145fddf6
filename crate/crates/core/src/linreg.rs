//! Regression and robust-statistics kernels: OLS, center-penalized LASSO and
//! the element-wise trimmed mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DesignMatrix, SymMatrix};
use crate::scalar::Scalar;

/// Eigenvalue floor on `X^T X / n` below which OLS is refused.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;

/// Fraction trimmed from each tail by [`trimmed_mean`]. Always in `[0, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TrimFraction(f64);

impl TrimFraction {
    pub const ZERO: TrimFraction = TrimFraction(0.0);

    pub fn new(omega: f64) -> Result<Self> {
        if !omega.is_finite() || !(0.0..0.5).contains(&omega) {
            return Err(Error::InvalidTrim(format!(
                "trim fraction must lie in [0, 1/2), got {omega}"
            )));
        }
        Ok(Self(omega))
    }

    /// Clamp into `[0, cap]`; `cap` must itself be a valid fraction.
    pub fn clamped(omega: f64, cap: f64) -> Result<Self> {
        let cap = Self::new(cap)?.0;
        if omega.is_nan() {
            return Err(Error::InvalidTrim("trim fraction is NaN".into()));
        }
        Ok(Self(omega.clamp(0.0, cap)))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Samples dropped from each end out of `n`: `floor(n * omega)`.
    pub fn trim_count(self, n: usize) -> usize {
        // The 1e-9 slack absorbs representation error in products such as
        // 0.29 * 100 = 28.999999999999996.
        (n as f64 * self.0 + 1e-9).floor() as usize
    }
}

impl TryFrom<f64> for TrimFraction {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TrimFraction> for f64 {
    fn from(t: TrimFraction) -> f64 {
        t.0
    }
}

/// Mean after discarding the `floor(N * omega)` smallest and largest samples.
pub fn trimmed_mean<T: Scalar>(samples: &[T], omega: TrimFraction) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("trimmed mean of an empty sample".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("trimmed mean of non-finite samples".into()));
    }
    let n = samples.len();
    let k = omega.trim_count(n);
    if n < 2 * k + 1 {
        return Err(Error::InvalidTrim(format!(
            "trimming {k} from each end of {n} samples leaves nothing"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let kept = &sorted[k..n - k];
    // Averaging offsets from a retained sample makes a constant remainder
    // return that constant exactly.
    let base = kept[kept.len() / 2];
    let offset = kept.iter().map(|&v| v - base).sum::<T>() / T::of_usize(kept.len());
    Ok(base + offset)
}

fn check_xy<T: Scalar>(x: &DesignMatrix<T>, y: &[T]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but response has {} entries",
            x.rows(),
            y.len()
        )));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite regression data".into()));
    }
    Ok(())
}

/// Ordinary least squares `(X^T X)^{-1} X^T Y`.
///
/// Fails with [`Error::SingularDesign`] when the smallest eigenvalue of the
/// sample covariance `X^T X / n` is below [`SINGULAR_TOLERANCE`].
pub fn ols_fit<T: Scalar>(x: &DesignMatrix<T>, y: &[T]) -> Result<Vec<T>> {
    check_xy(x, y)?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::SingularDesign {
            instance: None,
            min_eigenvalue: 0.0,
        });
    }
    let mut cov = x.gram();
    cov.scale(T::one() / T::of_usize(n));
    let min_eig = cov.min_eigenvalue();
    if min_eig < T::of(SINGULAR_TOLERANCE) {
        return Err(Error::SingularDesign {
            instance: None,
            min_eigenvalue: min_eig.to_f64_lossy(),
        });
    }
    let mut rhs = x.xt_vec(y);
    let inv_n = T::one() / T::of_usize(n);
    rhs.iter_mut().for_each(|v| *v *= inv_n);
    cov.cholesky_solve(&rhs).ok_or(Error::SingularDesign {
        instance: None,
        min_eigenvalue: min_eig.to_f64_lossy(),
    })
}

/// Minimum-norm least squares solution via the pseudo-inverse of `X^T X`.
///
/// Agrees with [`ols_fit`] on well-conditioned designs and stays defined when
/// `n < d`. An empty design yields the zero vector.
pub fn min_norm_lstsq<T: Scalar>(x: &DesignMatrix<T>, y: &[T]) -> Result<Vec<T>> {
    check_xy(x, y)?;
    let n = x.rows();
    if n == 0 {
        return Ok(vec![T::zero(); x.cols()]);
    }
    let inv_n = T::one() / T::of_usize(n);
    let mut cov = x.gram();
    cov.scale(inv_n);
    let mut rhs = x.xt_vec(y);
    rhs.iter_mut().for_each(|v| *v *= inv_n);
    Ok(cov.pinv_solve(&rhs, T::of(SINGULAR_TOLERANCE)))
}

/// Stopping rule for the coordinate-descent LASSO solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions<T> {
    /// Stop when the largest coordinate change in a sweep falls below this.
    pub update_tol: T,
    /// Stop when the KKT residual falls below this.
    pub kkt_tol: T,
    pub max_sweeps: usize,
}

impl<T: Scalar> Default for LassoOptions<T> {
    fn default() -> Self {
        let eps = T::epsilon();
        Self {
            update_tol: T::of(1e-8).max(eps * T::of(16.0)),
            kkt_tol: T::of(1e-7).max(eps * T::of(64.0)),
            max_sweeps: 10_000,
        }
    }
}

/// Solution plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit<T> {
    pub beta: Vec<T>,
    pub sweeps: usize,
    pub kkt_residual: T,
}

/// `argmin_b (1/n)||X b - Y||^2 + lambda ||b - center||_1`.
pub fn lasso_fit<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[T],
    lambda: T,
    center: &[T],
) -> Result<Vec<T>> {
    lasso_fit_with(x, y, lambda, center, &LassoOptions::default()).map(|f| f.beta)
}

/// [`lasso_fit`] with explicit stopping options and diagnostics.
///
/// Cyclic coordinate descent on `g = b - center` against the shifted response
/// `Y - X center`, using the covariance form of the updates.
pub fn lasso_fit_with<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[T],
    lambda: T,
    center: &[T],
    opts: &LassoOptions<T>,
) -> Result<LassoFit<T>> {
    check_xy(x, y)?;
    let d = x.cols();
    if x.rows() == 0 {
        return Err(Error::InvalidInput("LASSO needs at least one observation".into()));
    }
    if center.len() != d {
        return Err(Error::InvalidInput(format!(
            "center has length {}, expected {d}",
            center.len()
        )));
    }
    if !lambda.is_finite() || lambda < T::zero() || center.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("lambda must be finite and nonnegative".into()));
    }

    let inv_n = T::one() / T::of_usize(x.rows());
    let mut cov = x.gram();
    cov.scale(inv_n);
    let xc = x.mul_vec(center);
    let resid: Vec<T> = y.iter().zip(&xc).map(|(&a, &b)| a - b).collect();
    let mut b = x.xt_vec(&resid);
    b.iter_mut().for_each(|v| *v *= inv_n);

    let (gamma, sweeps, kkt) = coordinate_descent(&cov, &b, lambda, opts)?;
    Ok(LassoFit {
        beta: gamma.iter().zip(center).map(|(&g, &c)| g + c).collect(),
        sweeps,
        kkt_residual: kkt,
    })
}

fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Largest violation of the LASSO optimality conditions for
/// `g' C g - 2 b' g + lambda |g|_1`.
fn kkt_residual<T: Scalar>(cov: &SymMatrix<T>, b: &[T], gamma: &[T], lambda: T) -> T {
    let two = T::of(2.0);
    (0..gamma.len())
        .map(|i| {
            let grad = two * (dot(cov.row(i), gamma) - b[i]);
            if gamma[i] > T::zero() {
                (grad + lambda).abs()
            } else if gamma[i] < T::zero() {
                (grad - lambda).abs()
            } else {
                (grad.abs() - lambda).max(T::zero())
            }
        })
        .fold(T::zero(), T::max)
}

fn coordinate_descent<T: Scalar>(
    cov: &SymMatrix<T>,
    b: &[T],
    lambda: T,
    opts: &LassoOptions<T>,
) -> Result<(Vec<T>, usize, T)> {
    let d = b.len();
    let half_lambda = lambda / T::of(2.0);
    let mut gamma = vec![T::zero(); d];
    // Running C g, updated per coordinate change.
    let mut cg = vec![T::zero(); d];
    let mut kkt = kkt_residual(cov, b, &gamma, lambda);
    if kkt < opts.kkt_tol {
        return Ok((gamma, 0, kkt));
    }
    for sweep in 1..=opts.max_sweeps {
        let mut max_update = T::zero();
        for i in 0..d {
            let cii = cov.get(i, i);
            if cii <= T::zero() {
                continue;
            }
            let rho = b[i] - (cg[i] - cii * gamma[i]);
            let new = soft_threshold(rho, half_lambda) / cii;
            let delta = new - gamma[i];
            if delta != T::zero() {
                for (acc, &c) in cg.iter_mut().zip(cov.row(i)) {
                    *acc += c * delta;
                }
                gamma[i] = new;
                max_update = max_update.max(delta.abs());
            }
        }
        kkt = kkt_residual(cov, b, &gamma, lambda);
        if !kkt.is_finite() {
            return Err(Error::ConvergenceFailure {
                sweeps: sweep,
                kkt_residual: f64::NAN,
            });
        }
        if max_update < opts.update_tol || kkt < opts.kkt_tol {
            return Ok((gamma, sweep, kkt));
        }
    }
    Err(Error::ConvergenceFailure {
        sweeps: opts.max_sweeps,
        kkt_residual: kkt.to_f64_lossy(),
    })
}

/// The LASSO objective `(1/n)||X b - Y||^2 + lambda ||b - center||_1`.
pub fn lasso_objective<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[T],
    lambda: T,
    center: &[T],
    beta: &[T],
) -> T {
    let n = T::of_usize(x.rows());
    let sse: T = x
        .iter_rows()
        .zip(y)
        .map(|(r, &yi)| {
            let e = dot(r, beta) - yi;
            e * e
        })
        .sum();
    let pen: T = beta.iter().zip(center).map(|(&b, &c)| (b - c).abs()).sum();
    sse / n + lambda * pen
}
