//! Synthetic multitask contextual bandit environment.
//!
//! Arm parameters decompose as `beta_k^j = shared_k + delta_k^j` with sparse
//! instance biases. Arrivals are categorical over instances, contexts are
//! clipped standard gaussians and rewards are linear plus gaussian noise.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, l0_distance, DesignMatrix};
use crate::multitask::{TaskDataset, ALIGNMENT_TOLERANCE};
use crate::rng::{stream_rng, Stream};

/// A low-traffic instance: it receives `1/ratio` of the traffic of each other
/// instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoor {
    pub instance: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub instances: usize,
    pub arms: usize,
    pub dim: usize,
    pub sparsity: usize,
    /// Arrival probabilities; empty means uniform (or derived from `data_poor`).
    #[serde(default)]
    pub arrival_probs: Vec<f64>,
    /// Noise standard deviation per instance; a single entry applies to all.
    pub sigma: Vec<f64>,
    pub x_max: f64,
    pub bias_range: (f64, f64),
    #[serde(default)]
    pub data_poor: Option<DataPoor>,
}

impl EnvSpec {
    /// Standard synthetic configuration: N=10, K=10, d=20, s=2, sigma=0.05.
    pub fn standard() -> Self {
        Self {
            instances: 10,
            arms: 10,
            dim: 20,
            sparsity: 2,
            arrival_probs: Vec::new(),
            sigma: vec![0.05],
            x_max: 1.0,
            bias_range: (-0.5, 0.5),
            data_poor: None,
        }
    }

    /// Two instances, the first receiving 1/100 of the second's traffic.
    pub fn data_poor() -> Self {
        Self {
            instances: 2,
            data_poor: Some(DataPoor {
                instance: 0,
                ratio: 100.0,
            }),
            ..Self::standard()
        }
    }

    pub fn sigma_of(&self, j: usize) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[j]
        }
    }

    pub fn resolved_arrival_probs(&self) -> Vec<f64> {
        if !self.arrival_probs.is_empty() {
            return self.arrival_probs.clone();
        }
        let mut w = vec![1.0; self.instances];
        if let Some(dp) = self.data_poor {
            if dp.instance < w.len() {
                w[dp.instance] = 1.0 / dp.ratio;
            }
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    /// All violations of the invariants; empty means valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.instances == 0 {
            out.push("instances: must be at least 1".into());
        }
        if self.arms == 0 {
            out.push("arms: must be at least 1".into());
        }
        if self.dim == 0 {
            out.push("dim: must be at least 1".into());
        }
        if self.sparsity > self.dim {
            out.push(format!(
                "sparsity: s = {} exceeds dimension d = {}",
                self.sparsity, self.dim
            ));
        }
        if !(self.sigma.len() == 1 || self.sigma.len() == self.instances) {
            out.push(format!(
                "sigma: expected 1 or {} entries, got {}",
                self.instances,
                self.sigma.len()
            ));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            out.push("sigma: noise levels must be finite and nonnegative".into());
        }
        if !(self.x_max > 0.0) {
            out.push("x_max: must be positive".into());
        }
        if !(self.bias_range.0 <= self.bias_range.1) {
            out.push("bias_range: lower bound exceeds upper bound".into());
        }
        if let Some(dp) = self.data_poor {
            if dp.instance >= self.instances {
                out.push(format!("data_poor.instance: {} out of range", dp.instance));
            }
            if !(dp.ratio > 0.0) {
                out.push("data_poor.ratio: must be positive".into());
            }
        }
        let p = self.resolved_arrival_probs();
        if p.len() != self.instances {
            out.push(format!(
                "arrival_probs: expected {} entries, got {}",
                self.instances,
                p.len()
            ));
        }
        if p.iter().any(|v| !(*v > 0.0)) {
            out.push("arrival_probs: every probability must be positive".into());
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            out.push(format!("arrival_probs: probabilities sum to {sum}, not 1"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let diags = self.diagnostics();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(diags.join("; ")))
        }
    }
}

/// Sparse instance bias: nonzero `values` at `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseBias {
    pub support: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseBias {
    pub fn zero() -> Self {
        Self {
            support: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        for (&i, &x) in self.support.iter().zip(&self.values) {
            v[i] = x;
        }
        v
    }
}

/// True arm parameters of every instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dim: usize,
    /// `shared[k]`
    pub shared: Vec<Vec<f64>>,
    /// `deltas[j][k]`
    pub deltas: Vec<Vec<SparseBias>>,
    #[serde(skip)]
    arm_params: Vec<Vec<Vec<f64>>>,
}

impl GroundTruth {
    pub fn from_parts(dim: usize, shared: Vec<Vec<f64>>, deltas: Vec<Vec<SparseBias>>) -> Result<Self> {
        if shared.iter().any(|b| b.len() != dim) {
            return Err(Error::InvalidInput("shared parameter of wrong dimension".into()));
        }
        if deltas.iter().any(|row| row.len() != shared.len()) {
            return Err(Error::InvalidInput("bias table does not match arm count".into()));
        }
        if deltas
            .iter()
            .flatten()
            .any(|b| b.support.len() != b.values.len() || b.support.iter().any(|&i| i >= dim))
        {
            return Err(Error::InvalidInput("malformed sparse bias".into()));
        }
        let mut gt = Self {
            dim,
            shared,
            deltas,
            arm_params: Vec::new(),
        };
        gt.rebuild();
        Ok(gt)
    }

    /// Instance parameters given directly as dense vectors `params[j][k]`;
    /// the shared parameter is taken from instance 0.
    pub fn from_arm_params(params: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let first = params
            .first()
            .ok_or_else(|| Error::InvalidInput("no instances".into()))?;
        let dim = first.first().map_or(0, |b| b.len());
        let shared = first.clone();
        let deltas = params
            .iter()
            .map(|arms| {
                arms.iter()
                    .zip(&shared)
                    .map(|(b, s)| {
                        let support: Vec<usize> = (0..dim).filter(|&i| b[i] != s[i]).collect();
                        let values = support.iter().map(|&i| b[i] - s[i]).collect();
                        SparseBias { support, values }
                    })
                    .collect()
            })
            .collect();
        let mut gt = Self::from_parts(dim, shared, deltas)?;
        gt.arm_params = params;
        Ok(gt)
    }

    fn rebuild(&mut self) {
        self.arm_params = self
            .deltas
            .iter()
            .map(|arms| {
                arms.iter()
                    .zip(&self.shared)
                    .map(|(delta, base)| {
                        let mut b = base.clone();
                        for (&i, &v) in delta.support.iter().zip(&delta.values) {
                            b[i] += v;
                        }
                        b
                    })
                    .collect()
            })
            .collect();
    }

    pub fn instances(&self) -> usize {
        self.deltas.len()
    }

    pub fn arms(&self) -> usize {
        self.shared.len()
    }

    /// `beta_k^j`
    pub fn arm_param(&self, j: usize, k: usize) -> &[f64] {
        &self.arm_params[j][k]
    }

    pub fn mean_reward(&self, j: usize, k: usize, x: &[f64]) -> f64 {
        dot(x, self.arm_param(j, k))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GroundTruth =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_parts(raw.dim, raw.shared, raw.deltas)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Shared parameters `N(0, I)` then l1-normalized; instance 0 has no bias;
/// every other `(j, k)` gets `s` coordinates chosen without replacement with
/// values uniform on `bias_range`.
pub fn generate_ground_truth(spec: &EnvSpec, rng: &mut impl Rng) -> Result<GroundTruth> {
    if spec.sparsity > spec.dim {
        return Err(Error::InvalidConfig(format!(
            "sparsity {} exceeds dimension {}",
            spec.sparsity, spec.dim
        )));
    }
    let d = spec.dim;
    let shared: Vec<Vec<f64>> = (0..spec.arms)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm: f64 = v.iter().map(|x: &f64| x.abs()).sum();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let (lo, hi) = spec.bias_range;
    let bias = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let deltas = (0..spec.instances)
        .map(|j| {
            (0..spec.arms)
                .map(|_| {
                    if j == 0 || spec.sparsity == 0 {
                        return SparseBias::zero();
                    }
                    let mut support = sample(rng, d, spec.sparsity).into_vec();
                    support.sort_unstable();
                    let values = support.iter().map(|_| bias.sample(rng)).collect();
                    SparseBias { support, values }
                })
                .collect()
        })
        .collect();
    GroundTruth::from_parts(d, shared, deltas)
}

/// Categorical draw over instances.
pub fn sample_arrival(probs: &WeightedIndex<f64>, rng: &mut impl Rng) -> usize {
    probs.sample(rng)
}

/// `N(0, I_d)` clipped coordinate-wise to `[-x_max, x_max]`.
pub fn sample_context(dim: usize, x_max: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z.clamp(-x_max, x_max)
        })
        .collect()
}

/// `x' beta_k^j + sigma_j * z` with `z ~ N(0, 1)`.
pub fn sample_reward(mean: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sigma * z
}

/// Arm with the highest expected reward, lowest index on ties.
pub fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn oracle_arm(j: usize, x: &[f64], truth: &GroundTruth) -> usize {
    argmax_lowest((0..truth.arms()).map(|k| truth.mean_reward(j, k, x)))
}

/// Expected regret of pulling `chosen` at instance `j` for context `x`.
pub fn score_step(j: usize, x: &[f64], chosen: usize, truth: &GroundTruth) -> f64 {
    let best = (0..truth.arms())
        .map(|k| truth.mean_reward(j, k, x))
        .fold(f64::NEG_INFINITY, f64::max);
    (best - truth.mean_reward(j, chosen, x)).max(0.0)
}

/// Source of arrivals, contexts and rewards for a bandit simulation.
pub trait BanditEnvironment {
    fn instances(&self) -> usize;
    fn arms(&self) -> usize;
    fn dim(&self) -> usize;
    fn next_arrival(&mut self) -> usize;
    fn next_context(&mut self, instance: usize) -> Vec<f64>;
    /// Noisy reward for pulling `arm`. Called exactly once per step.
    fn pull(&mut self, instance: usize, arm: usize, x: &[f64]) -> f64;
    fn mean_reward(&self, instance: usize, arm: usize, x: &[f64]) -> f64;

    fn regret(&self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        let best = (0..self.arms())
            .map(|k| self.mean_reward(instance, k, x))
            .fold(f64::NEG_INFINITY, f64::max);
        (best - self.mean_reward(instance, arm, x)).max(0.0)
    }

    fn oracle_arm(&self, instance: usize, x: &[f64]) -> usize {
        argmax_lowest((0..self.arms()).map(|k| self.mean_reward(instance, k, x)))
    }
}

/// The synthetic environment, with independent seeded streams for arrivals,
/// contexts and noise.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    spec: EnvSpec,
    truth: GroundTruth,
    probs: WeightedIndex<f64>,
    arrivals: ChaCha8Rng,
    contexts: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl SyntheticEnv {
    /// Ground truth and all streams derived from `seed`.
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let truth = generate_ground_truth(&spec, &mut stream_rng(seed, Stream::GroundTruth))?;
        Self::with_truth(spec, truth, seed)
    }

    pub fn with_truth(spec: EnvSpec, truth: GroundTruth, seed: u64) -> Result<Self> {
        spec.validate()?;
        if truth.instances() != spec.instances || truth.arms() != spec.arms || truth.dim != spec.dim {
            return Err(Error::InvalidConfig("ground truth does not match spec".into()));
        }
        let probs = WeightedIndex::new(spec.resolved_arrival_probs())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self {
            spec,
            truth,
            probs,
            arrivals: stream_rng(seed, Stream::Arrivals),
            contexts: stream_rng(seed, Stream::Contexts),
            noise: stream_rng(seed, Stream::Noise),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }
}

impl BanditEnvironment for SyntheticEnv {
    fn instances(&self) -> usize {
        self.spec.instances
    }

    fn arms(&self) -> usize {
        self.spec.arms
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn next_arrival(&mut self) -> usize {
        sample_arrival(&self.probs, &mut self.arrivals)
    }

    fn next_context(&mut self, _instance: usize) -> Vec<f64> {
        sample_context(self.spec.dim, self.spec.x_max, &mut self.contexts)
    }

    fn pull(&mut self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        let mean = self.truth.mean_reward(instance, arm, x);
        sample_reward(mean, self.spec.sigma_of(instance), &mut self.noise)
    }

    fn mean_reward(&self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        self.truth.mean_reward(instance, arm, x)
    }
}

/// `n` i.i.d. observations `y = x' beta + sigma z` with clipped gaussian `x`.
pub fn sample_task_dataset(
    instance_id: usize,
    beta: &[f64],
    n: usize,
    sigma: f64,
    x_max: f64,
    rng: &mut impl Rng,
) -> TaskDataset<f64> {
    let d = beta.len();
    let mut values = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_context(d, x_max, rng);
        y.push(sample_reward(dot(&x, beta), sigma, rng));
        values.extend_from_slice(&x);
    }
    let x = DesignMatrix::from_row_major(n, d, values).expect("consistent shape");
    TaskDataset { instance_id, x, y }
}

/// Instance network with `s_ij = max_k ||beta_k^i - beta_k^j||_0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    weights: Vec<Vec<usize>>,
}

impl SimilarityGraph {
    pub fn from_truth(truth: &GroundTruth) -> Self {
        let n = truth.instances();
        let mut weights = vec![vec![0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let w = (0..truth.arms())
                    .map(|k| l0_distance(truth.arm_param(i, k), truth.arm_param(j, k), ALIGNMENT_TOLERANCE))
                    .max()
                    .unwrap_or(0);
                weights[i][j] = w;
                weights[j][i] = w;
            }
        }
        Self { weights }
    }

    /// Explicit weights; must be square, symmetric with a zero diagonal.
    pub fn from_weights(weights: Vec<Vec<usize>>) -> Result<Self> {
        let n = weights.len();
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n || row[i] != 0 {
                return Err(Error::InvalidInput("weights must be square with zero diagonal".into()));
            }
            for (j, &w) in row.iter().enumerate() {
                if weights[j][i] != w {
                    return Err(Error::InvalidInput("weights must be symmetric".into()));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize, j: usize) -> usize {
        self.weights[i][j]
    }
}

/// `Q_j = { i : s_ij <= s_tilde }`.
pub fn select_instances(graph: &SimilarityGraph, j: usize, s_tilde: usize) -> BTreeSet<usize> {
    (0..graph.len())
        .filter(|&i| graph.weight(i, j) <= s_tilde)
        .collect()
}

/// `ceil(d^(1/(alpha+1)))` clipped to `[1, instances]`.
pub fn optimal_subset_size(d: usize, alpha: f64, instances: usize) -> usize {
    let exponent = if alpha.is_infinite() { 0.0 } else { 1.0 / (alpha + 1.0) };
    let raw = (d as f64).powf(exponent);
    // Guard against pow returning k + 1e-15 for exact integer results.
    let n = (raw - 1e-9).ceil().max(1.0) as usize;
    n.clamp(1, instances.max(1))
}
