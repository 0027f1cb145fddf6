//! Hyperparameters under which the regret guarantees hold.
//!
//! The theoretical constants are very conservative; in practice they are a
//! starting point for tuning, not settings to run with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem constants entering the hyperparameter formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub x_max: f64,
    /// Noise level per instance.
    pub sigma: Vec<f64>,
    /// Arrival probability per instance.
    pub p: Vec<f64>,
    pub p_star: f64,
    pub psi: f64,
    pub rho: f64,
    pub h: f64,
    /// Constant of the estimator tail bound.
    pub c: f64,
    pub s: usize,
    pub d: usize,
    pub arms: usize,
    pub horizon: usize,
}

/// Evaluated hyperparameters. Trim values are raw formula outputs and may
/// fall outside `[0, 0.5)`; see `warnings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryHyper {
    pub zeta0: f64,
    pub eta0: f64,
    pub zeta10: f64,
    pub eta10: f64,
    pub lambda0: Vec<f64>,
    pub lambda10: Vec<f64>,
    pub q: f64,
    pub warnings: Vec<String>,
}

impl ProblemConstants {
    pub fn instances(&self) -> usize {
        self.p.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.instances();
        let mut bad = Vec::new();
        for (name, v) in [
            ("x_max", self.x_max),
            ("p_star", self.p_star),
            ("psi", self.psi),
            ("rho", self.rho),
            ("h", self.h),
            ("c", self.c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be positive"));
            }
        }
        if n == 0 || self.p.iter().any(|&p| !(p > 0.0)) {
            bad.push("p: arrival probabilities must be positive".into());
        }
        if !(self.sigma.len() == 1 || self.sigma.len() == n) || self.sigma.iter().any(|&s| !(s > 0.0)) {
            bad.push("sigma: need 1 or N positive entries".into());
        }
        if self.s == 0 || self.d == 0 || self.arms == 0 || self.horizon < 2 {
            bad.push("s, d, arms must be positive and horizon at least 2".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }

    fn sigma_of(&self, j: usize) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[j]
        }
    }

    fn b0(&self, q: f64) -> f64 {
        (q * (self.horizon as f64).ln()).ceil()
    }
}

fn trim_warnings(out: &mut Vec<String>, name: &str, v: f64) {
    if !(0.0..0.5).contains(&v) {
        out.push(format!("{name} = {v:.4} is not a valid trim fraction"));
    }
}

/// Standard-regime hyperparameters.
pub fn theoretical_hyperparams(c: &ProblemConstants) -> Result<TheoryHyper> {
    c.check()?;
    let n = c.instances();
    let (x, h, ps, psi) = (c.x_max, c.h, c.p_star, c.psi);
    let (s, d, k) = (c.s as f64, c.d as f64, c.arms as f64);
    let nf = n as f64;
    let max_sig_p = (0..n)
        .map(|i| c.sigma_of(i).powi(2) / c.p[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let min_p = c.p.iter().copied().fold(f64::INFINITY, f64::min);

    let q = [
        (384.0 * 3f64.sqrt()).powi(2) * x * x * max_sig_p * k * d * d * d.ln() * nf.ln()
            / (c.c * c.c * h * h * ps * psi * nf),
        192f64.powi(3) * x.powi(4) * max_sig_p * k * s * d * d.ln() / (h * h * ps * ps * psi * psi),
        96.0 * x * x * k * d * (d * nf).ln() / (ps * psi * min_p),
        60.0 * k * nf.ln() / (ps * min_p),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);

    let b0 = c.b0(q);
    let ratio = |i: usize| (ps * psi * c.p[i] * b0 / (k * c.sigma_of(i).powi(2))).sqrt();
    let min_ratio = (0..n).map(ratio).fold(f64::INFINITY, f64::min);
    let max_inv = (0..n).map(|i| 1.0 / ratio(i)).fold(f64::NEG_INFINITY, f64::max);
    let eta0 = (c.c * h / (128.0 * x * d)) * min_ratio
        / (2.0 * ((384.0 * x * d / (c.c * h)) * max_inv).ln()).sqrt();

    let zeta = (s / d).sqrt();
    let eta10 = (9.0 / (c.rho * nf)).sqrt();
    let lambda0 = ps * psi * h / (192.0 * x * (s * d).sqrt());
    let lambda10 = (0..n)
        .map(|j| (64.0 * c.sigma_of(j).powi(2) * x * x / ps).sqrt())
        .collect();

    let mut warnings = Vec::new();
    trim_warnings(&mut warnings, "zeta0", zeta);
    trim_warnings(&mut warnings, "zeta0 + eta0", zeta + eta0);
    trim_warnings(&mut warnings, "zeta10 + eta10", zeta + eta10);
    if !eta0.is_finite() {
        warnings.push("eta0 is undefined (log term not positive)".into());
    }
    Ok(TheoryHyper {
        zeta0: zeta,
        eta0,
        zeta10: zeta,
        eta10,
        lambda0: vec![lambda0; n],
        lambda10,
        q,
        warnings,
    })
}

/// Data-poor hyperparameters for target instance `target` learning from the
/// data-rich instance `source`, with compatibility constant `psi_prime`.
pub fn theoretical_hyperparams_data_poor(
    c: &ProblemConstants,
    target: usize,
    source: usize,
    psi_prime: f64,
) -> Result<TheoryHyper> {
    c.check()?;
    let n = c.instances();
    if target >= n || source >= n {
        return Err(Error::InvalidConfig("target/source instance out of range".into()));
    }
    if !(psi_prime > 0.0) {
        return Err(Error::InvalidConfig("psi_prime must be positive".into()));
    }
    let (x, h, ps, psi) = (c.x_max, c.h, c.p_star, c.psi);
    let (s, d, k) = (c.s as f64, c.d as f64, c.arms as f64);
    let (pl, pj) = (c.p[source], c.p[target]);
    let (sl, sj) = (c.sigma_of(source), c.sigma_of(target));
    let cc = f64::max(0.5, psi_prime * psi_prime / (512.0 * s * x * x));

    let q = [
        (128.0 * 3f64.sqrt()).powi(2) * sl * sl * x * x * k * d * d * d.ln() / (h * h * ps * psi * pl),
        (2048.0 * 3f64.sqrt()).powi(2) * x.powi(4) * sj * sj * k * s * s * d.ln()
            / (h * h * pj * ps * ps * psi * psi),
        96.0 * x * x * k * d * d.ln() / (ps * psi * pl),
        4.0 * k / (cc * cc * ps * pj),
        20.0 * k / (ps * pj),
        12.0 * k * d.ln() / (cc * cc * ps * pj),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);

    let lambda0 = ps * psi * h / (256.0 * x * s);
    let lambda10 = (0..n)
        .map(|j| (64.0 * c.sigma_of(j).powi(2) * x * x / ps).sqrt())
        .collect();
    Ok(TheoryHyper {
        zeta0: 1.0,
        eta0: 0.0,
        zeta10: 1.0,
        eta10: 0.0,
        lambda0: vec![lambda0; n],
        lambda10,
        q,
        warnings: vec![
            "zeta = 1 with a single source instance: the trimmed mean is the source estimate".into(),
        ],
    })
}
