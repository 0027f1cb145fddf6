use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linreg::TrimFraction;
use crate::multitask::SingularPolicy;

use super::schedule::{build_schedule, BatchSchedule};

/// Upper limit applied to trim fractions produced by the hyperparameter path.
pub const MAX_TRIM_FRACTION: f64 = 0.49;

/// Configuration of a batched bandit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub horizon: usize,
    pub instances: usize,
    pub arms: usize,
    pub dim: usize,
    pub q: f64,
    pub h: f64,
    /// Forced-sample trim parts: `omega_0 = zeta0 + eta0`.
    pub zeta0: f64,
    pub eta0: f64,
    /// Initial all-sample trim parts.
    pub zeta10: f64,
    pub eta10: f64,
    /// Forced-sample regularization per instance (one entry broadcasts).
    pub lambda0: Vec<f64>,
    /// Initial all-sample regularization per instance (one entry broadcasts).
    pub lambda10: Vec<f64>,
    /// Instance kept out of every trimmed mean.
    #[serde(default)]
    pub exclude_data_poor: Option<usize>,
    /// `Q_j`: instances pooled when estimating for instance `j`.
    #[serde(default)]
    pub instance_subsets: Option<Vec<BTreeSet<usize>>>,
    #[serde(default = "default_singular")]
    pub singular_policy: SingularPolicy,
}

fn default_singular() -> SingularPolicy {
    SingularPolicy::MinNorm
}

impl BanditConfig {
    /// RMBandit settings for the standard synthetic experiment.
    pub fn rmbandit_standard(horizon: usize, instances: usize, arms: usize, dim: usize) -> Self {
        Self {
            horizon,
            instances,
            arms,
            dim,
            q: 50.0,
            h: 15.0,
            zeta0: 0.1,
            eta0: 0.2,
            zeta10: 0.1,
            eta10: 0.2,
            lambda0: vec![0.05],
            lambda10: vec![0.05],
            exclude_data_poor: None,
            instance_subsets: None,
            singular_policy: SingularPolicy::MinNorm,
        }
    }

    /// RMBandit for one data-poor instance next to data-rich ones: the poor
    /// instance's own estimate is kept out of the trimmed mean and `q = 300`.
    pub fn rmbandit_data_poor(
        horizon: usize,
        instances: usize,
        arms: usize,
        dim: usize,
        poor: usize,
    ) -> Self {
        Self {
            q: 300.0,
            exclude_data_poor: Some(poor),
            ..Self::rmbandit_standard(horizon, instances, arms, dim)
        }
    }

    /// OLS/LASSO Bandit settings: `h = 15`, `q = 1`, `lambda = 0.02`.
    pub fn baseline_standard(horizon: usize, instances: usize, arms: usize, dim: usize) -> Self {
        Self {
            q: 1.0,
            lambda0: vec![0.02],
            lambda10: vec![0.02],
            ..Self::rmbandit_standard(horizon, instances, arms, dim)
        }
    }

    pub fn lambda0_of(&self, j: usize) -> f64 {
        broadcast(&self.lambda0, j)
    }

    pub fn lambda10_of(&self, j: usize) -> f64 {
        broadcast(&self.lambda10, j)
    }

    pub fn omega0(&self) -> Result<TrimFraction> {
        TrimFraction::new(self.zeta0 + self.eta0)
    }

    pub fn omega10(&self) -> Result<TrimFraction> {
        TrimFraction::new(self.zeta10 + self.eta10)
    }

    pub fn schedule(&self) -> Result<BatchSchedule> {
        build_schedule(self.horizon, self.q)
    }

    /// Instances pooled for target `j`.
    pub fn subset_of(&self, j: usize) -> BTreeSet<usize> {
        match &self.instance_subsets {
            Some(q) => q[j].clone(),
            None => (0..self.instances).collect(),
        }
    }

    /// All violations of the config invariants; empty means valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.horizon < 1 {
            out.push("horizon: must be at least 1".into());
        }
        if self.instances < 1 {
            out.push("instances: must be at least 1".into());
        }
        if self.arms < 1 {
            out.push("arms: must be at least 1".into());
        }
        if self.dim < 1 {
            out.push("dim: must be at least 1".into());
        }
        if !(self.q > 0.0) {
            out.push("q: must be positive".into());
        }
        if !(self.h > 0.0) {
            out.push("h: must be positive".into());
        }
        if let Err(e) = self.schedule() {
            out.push(format!("q: {e}"));
        }
        for (name, v) in [
            ("zeta0", self.zeta0),
            ("eta0", self.eta0),
            ("zeta10", self.zeta10),
            ("eta10", self.eta10),
        ] {
            if !(v >= 0.0) {
                out.push(format!("{name}: must be nonnegative"));
            }
        }
        if let Err(e) = self.omega0() {
            out.push(format!("zeta0 + eta0: {e}"));
        }
        if let Err(e) = self.omega10() {
            out.push(format!("zeta10 + eta10: {e}"));
        }
        for (name, l) in [("lambda0", &self.lambda0), ("lambda10", &self.lambda10)] {
            if !(l.len() == 1 || l.len() == self.instances) {
                out.push(format!(
                    "{name}: expected 1 or {} entries, got {}",
                    self.instances,
                    l.len()
                ));
            }
            if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                out.push(format!("{name}: regularization must be finite and nonnegative"));
            }
        }
        if let Some(p) = self.exclude_data_poor {
            if p >= self.instances {
                out.push(format!("exclude_data_poor: instance {p} out of range"));
            }
        }
        if let Some(q) = &self.instance_subsets {
            if q.len() != self.instances {
                out.push(format!(
                    "instance_subsets: expected {} sets, got {}",
                    self.instances,
                    q.len()
                ));
            }
            for (j, set) in q.iter().enumerate() {
                if !set.contains(&j) {
                    out.push(format!("instance_subsets[{j}]: must contain {j}"));
                }
                if set.iter().any(|&i| i >= self.instances) {
                    out.push(format!("instance_subsets[{j}]: instance out of range"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(d.join("; ")))
        }
    }

    /// Short stable digest of the serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn broadcast(v: &[f64], j: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[j]
    }
}

/// Trim and regularization levels along the batch sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPathState {
    pub omega0: TrimFraction,
    pub zeta1: f64,
    pub eta10: f64,
    /// `(eta_{1,m}, omega_{1,m})` for every batch fitted so far, starting at m = 0.
    pub path: Vec<(f64, TrimFraction)>,
    /// `lambda_{1,j,m}` per instance for the latest batch.
    pub lambda1: Vec<f64>,
}

impl HyperPathState {
    pub fn new(config: &BanditConfig) -> Result<Self> {
        Ok(Self {
            omega0: config.omega0()?,
            zeta1: config.zeta10,
            eta10: config.eta10,
            path: vec![(config.eta10, config.omega10()?)],
            lambda1: (0..config.instances).map(|j| config.lambda10_of(j)).collect(),
        })
    }

    pub fn omega1(&self) -> TrimFraction {
        self.path.last().expect("initialized").1
    }

    /// End-of-batch update from the per-instance arrival counts of the batch:
    /// `eta_{1,m} = eta_{1,0} sqrt(ln(d min_j n_j))` over instances with
    /// `n_j > 0`, and `lambda_{1,j,m} = lambda_{1,j,0} sqrt(ln(d n_j) / n_j)`.
    /// Instances without arrivals keep their previous lambda.
    pub fn advance(&mut self, config: &BanditConfig, batch_counts: &[usize]) -> Result<()> {
        let d = config.dim as f64;
        let (eta, omega) = match batch_counts.iter().copied().filter(|&n| n > 0).min() {
            Some(n_min) => {
                let eta = self.eta10 * (d * n_min as f64).ln().max(0.0).sqrt();
                (eta, TrimFraction::clamped(self.zeta1 + eta, MAX_TRIM_FRACTION)?)
            }
            None => *self.path.last().expect("initialized"),
        };
        self.path.push((eta, omega));
        for (j, &n) in batch_counts.iter().enumerate() {
            if n > 0 {
                let n = n as f64;
                self.lambda1[j] = config.lambda10_of(j) * ((d * n).ln().max(0.0) / n).sqrt();
            }
        }
        Ok(())
    }
}
