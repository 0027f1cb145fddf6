//! Multitask dynamic pricing with price experimentation (RMX).
//!
//! Demand at instance `j` is `x' beta0_j + p * x' beta1_j + noise`. Two
//! experimental prices are charged at square-numbered arrivals; otherwise the
//! seller charges the revenue-maximizing price under the current estimates.
//! Estimates are refit at times `N (E^2 + 1)` from the experimental
//! observations only.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::bandit::MAX_TRIM_FRACTION;
use crate::environment::sample_reward;
use crate::error::{Error, Result};
use crate::linalg::{dot, DesignMatrix};
use crate::linreg::{lasso_fit, TrimFraction};
use crate::multitask::{
    fit_robust_multitask, step_one_estimate, EstimatorHyper, SingularPolicy, TaskDataset,
};
use crate::rng::{stream_rng, Stream};
use crate::trace::RegretTrace;

/// Linear demand model per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingModel {
    pub beta0: Vec<Vec<f64>>,
    pub beta1: Vec<Vec<f64>>,
    pub p_min: f64,
    pub p_max: f64,
    pub experimental_prices: [f64; 2],
}

impl PricingModel {
    pub fn instances(&self) -> usize {
        self.beta0.len()
    }

    pub fn dim(&self) -> usize {
        self.beta0.first().map_or(0, Vec::len)
    }

    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let [p1, p2] = self.experimental_prices;
        if !(self.p_min < p1 && p1 < p2 && p2 < self.p_max) {
            out.push(format!(
                "prices: need p_min < p1 < p2 < p_max, got {} < {p1} < {p2} < {}",
                self.p_min, self.p_max
            ));
        }
        if self.beta0.is_empty() || self.beta0.len() != self.beta1.len() {
            out.push("beta0/beta1: need the same positive number of instances".into());
        }
        let d = self.dim();
        if self.beta0.iter().chain(&self.beta1).any(|b| b.len() != d || d == 0) {
            out.push("beta0/beta1: all parameter vectors need the same positive length".into());
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

    pub fn expected_demand(&self, j: usize, x: &[f64], price: f64) -> f64 {
        dot(x, &self.beta0[j]) + price * dot(x, &self.beta1[j])
    }

    pub fn expected_revenue(&self, j: usize, x: &[f64], price: f64) -> f64 {
        price * self.expected_demand(j, x, price)
    }

    /// Revenue-maximizing price under the true parameters.
    pub fn oracle_price(&self, j: usize, x: &[f64]) -> f64 {
        optimal_price(x, &self.beta0[j], &self.beta1[j], self.p_min, self.p_max)
    }

    /// Expected revenue lost by charging `price`.
    pub fn regret(&self, j: usize, x: &[f64], price: f64) -> f64 {
        let best = self.expected_revenue(j, x, self.oracle_price(j, x));
        (best - self.expected_revenue(j, x, price)).max(0.0)
    }
}

/// Experiment index (1 or 2) if the `arrival_count`-th arrival at an instance
/// is a forced period: counts `E^2` charge `p1`, counts `E^2 + 1` charge `p2`.
pub fn is_forced_period(arrival_count: usize) -> Option<usize> {
    assert!(arrival_count >= 1, "arrival counts start at 1");
    let root = integer_sqrt(arrival_count);
    if root * root == arrival_count {
        Some(1)
    } else if root * root + 1 == arrival_count {
        Some(2)
    } else {
        None
    }
}

fn integer_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Whether `t` is an update time `N (E^2 + 1)`, `E >= 1`.
pub fn is_update_time(t: usize, instances: usize) -> bool {
    if instances == 0 || t % instances != 0 {
        return false;
    }
    let e2 = t / instances;
    e2 >= 2 && {
        let r = integer_sqrt(e2 - 1);
        r * r == e2 - 1
    }
}

/// `x'b0 / (-2 x'b1)` clamped to `[p_min, p_max]`; `p_max` if estimated
/// revenue is not concave in price (`x'b1 >= 0`).
pub fn optimal_price(x: &[f64], beta0: &[f64], beta1: &[f64], p_min: f64, p_max: f64) -> f64 {
    let slope = dot(x, beta1);
    if slope >= 0.0 {
        return p_max;
    }
    (dot(x, beta0) / (-2.0 * slope)).clamp(p_min, p_max)
}

/// Estimator used inside the pricing loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingEstimator {
    /// Robust multitask estimator over all instances (RMX).
    Robust,
    /// Per-instance OLS (ILSX-style).
    Ols,
    /// Per-instance LASSO centered at zero (ILQX-style).
    Lasso,
}

impl PricingEstimator {
    pub fn name(self) -> &'static str {
        match self {
            PricingEstimator::Robust => "rmx",
            PricingEstimator::Ols => "ilsx",
            PricingEstimator::Lasso => "ilqx",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmxConfig {
    pub horizon: usize,
    pub zeta0: f64,
    pub eta0: f64,
    /// `lambda_{j,0}`; one entry broadcasts.
    pub lambda0: Vec<f64>,
    /// Prices enter the design as `p / price_scale`.
    pub price_scale: f64,
    #[serde(default = "default_singular")]
    pub singular_policy: SingularPolicy,
}

fn default_singular() -> SingularPolicy {
    SingularPolicy::MinNorm
}

impl RmxConfig {
    fn lambda0_of(&self, j: usize) -> f64 {
        if self.lambda0.len() == 1 {
            self.lambda0[0]
        } else {
            self.lambda0[j]
        }
    }

    pub fn diagnostics(&self, instances: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.horizon < 1 {
            out.push("horizon: must be at least 1".into());
        }
        if let Err(e) = TrimFraction::new(self.zeta0 + self.eta0) {
            out.push(format!("zeta0 + eta0: {e}"));
        }
        if !(self.eta0 >= 0.0 && self.zeta0 >= 0.0) {
            out.push("zeta0, eta0: must be nonnegative".into());
        }
        if !(self.lambda0.len() == 1 || self.lambda0.len() == instances) {
            out.push(format!("lambda0: expected 1 or {instances} entries"));
        }
        if self.lambda0.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            out.push("lambda0: must be finite and nonnegative".into());
        }
        if !(self.price_scale > 0.0) {
            out.push("price_scale: must be positive".into());
        }
        out
    }
}

/// Settings of a synthetic pricing environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingSpec {
    pub instances: usize,
    /// Feature dimension including the leading intercept.
    pub dim: usize,
    pub sparsity: usize,
    pub sigma: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub experimental_prices: [f64; 2],
}

impl PricingSpec {
    pub fn standard() -> Self {
        Self {
            instances: 5,
            dim: 5,
            sparsity: 1,
            sigma: 0.0,
            p_min: 0.0,
            p_max: 1000.0,
            experimental_prices: [200.0, 600.0],
        }
    }
}

/// Shared demand parameters with sparse per-instance perturbations.
///
/// Baseline demand has intercept 100 and feature weights in `[0, 20]`; price
/// sensitivity has intercept -0.1 and feature weights in `[-0.02, 0]`.
/// Instances other than 0 rescale `sparsity` non-intercept coordinates of
/// both vectors by factors in `[0.5, 1.5]`. Contexts are nonnegative, so every
/// instance has a strictly concave revenue curve.
pub fn generate_pricing_model(spec: &PricingSpec, rng: &mut impl Rng) -> Result<PricingModel> {
    if spec.dim == 0 || spec.sparsity > spec.dim - 1 {
        return Err(Error::InvalidConfig(format!(
            "need dim >= 1 and sparsity < dim, got dim {} sparsity {}",
            spec.dim, spec.sparsity
        )));
    }
    let unit = Uniform::new(0.0, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let d = spec.dim;
    let mut b0 = vec![100.0];
    let mut b1 = vec![-0.1];
    for _ in 1..d {
        b0.push(20.0 * unit.sample(rng));
        b1.push(-0.02 * unit.sample(rng));
    }
    let mut beta0 = Vec::with_capacity(spec.instances);
    let mut beta1 = Vec::with_capacity(spec.instances);
    for j in 0..spec.instances {
        let (mut a, mut b) = (b0.clone(), b1.clone());
        if j > 0 && spec.sparsity > 0 {
            for i in rand::seq::index::sample(rng, d - 1, spec.sparsity) {
                a[i + 1] *= 0.5 + unit.sample(rng);
                b[i + 1] *= 0.5 + unit.sample(rng);
            }
        }
        beta0.push(a);
        beta1.push(b);
    }
    let model = PricingModel {
        beta0,
        beta1,
        p_min: spec.p_min,
        p_max: spec.p_max,
        experimental_prices: spec.experimental_prices,
    };
    model.validate()?;
    Ok(model)
}

/// Source of arrivals, contexts and demand for a pricing simulation.
pub trait PricingEnvironment {
    fn model(&self) -> &PricingModel;
    fn next_arrival(&mut self) -> usize;
    fn next_context(&mut self) -> Vec<f64>;
    /// Realized demand at `price`. Called exactly once per step.
    fn demand(&mut self, j: usize, x: &[f64], price: f64) -> f64;
}

/// Pricing environment: uniform arrivals, contexts `[1, u_1, .., u_{d-1}]`
/// with `u_i ~ U[0, 1]`, gaussian demand noise.
#[derive(Debug, Clone)]
pub struct PricingEnv {
    model: PricingModel,
    sigma: f64,
    probs: WeightedIndex<f64>,
    arrivals: ChaCha8Rng,
    contexts: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl PricingEnv {
    pub fn new(spec: &PricingSpec, seed: u64) -> Result<Self> {
        let model = generate_pricing_model(spec, &mut stream_rng(seed, Stream::GroundTruth))?;
        Self::with_model(model, spec.sigma, seed)
    }

    pub fn with_model(model: PricingModel, sigma: f64, seed: u64) -> Result<Self> {
        model.validate()?;
        if !(sigma >= 0.0) {
            return Err(Error::InvalidConfig("sigma must be nonnegative".into()));
        }
        let probs = WeightedIndex::new(vec![1.0; model.instances()])
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self {
            model,
            sigma,
            probs,
            arrivals: stream_rng(seed, Stream::Arrivals),
            contexts: stream_rng(seed, Stream::Contexts),
            noise: stream_rng(seed, Stream::Noise),
        })
    }

}

impl PricingEnvironment for PricingEnv {
    fn model(&self) -> &PricingModel {
        &self.model
    }

    fn next_arrival(&mut self) -> usize {
        self.probs.sample(&mut self.arrivals)
    }

    fn next_context(&mut self) -> Vec<f64> {
        let d = self.model.dim();
        let mut x = Vec::with_capacity(d);
        x.push(1.0);
        for _ in 1..d {
            x.push(self.contexts.random::<f64>());
        }
        x
    }

    fn demand(&mut self, j: usize, x: &[f64], price: f64) -> f64 {
        sample_reward(self.model.expected_demand(j, x, price), self.sigma, &mut self.noise)
    }
}

/// Experimental observations: `(t, j, x, price, demand)`.
#[derive(Debug, Clone, PartialEq)]
struct Observation {
    t: usize,
    x: Vec<f64>,
    price: f64,
    demand: f64,
}

/// State of a pricing run, exposed for inspection.
#[derive(Debug, Clone)]
pub struct RmxEngine {
    config: RmxConfig,
    estimator: PricingEstimator,
    instances: usize,
    dim: usize,
    p_bounds: (f64, f64),
    experimental_prices: [f64; 2],
    /// Current `(beta0, beta1)` estimates in original price units.
    estimates: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    forced: Vec<Vec<Observation>>,
    arrivals: Vec<usize>,
    last_update: Option<usize>,
    /// Update times at which a refit happened.
    pub updates: Vec<usize>,
    pub failures: Vec<(usize, String)>,
    t: usize,
}

impl RmxEngine {
    pub fn new(config: RmxConfig, estimator: PricingEstimator, model: &PricingModel) -> Result<Self> {
        let n = model.instances();
        let diag = config.diagnostics(n);
        if !diag.is_empty() {
            return Err(Error::InvalidConfig(diag.join("; ")));
        }
        model.validate()?;
        Ok(Self {
            estimator,
            instances: n,
            dim: model.dim(),
            p_bounds: (model.p_min, model.p_max),
            experimental_prices: model.experimental_prices,
            estimates: vec![None; n],
            forced: vec![Vec::new(); n],
            arrivals: vec![0; n],
            last_update: None,
            updates: Vec::new(),
            failures: Vec::new(),
            t: 0,
            config,
        })
    }

    pub fn estimates(&self) -> &[Option<(Vec<f64>, Vec<f64>)>] {
        &self.estimates
    }

    /// Price charged to a non-forced arrival; `p_max` before any estimate.
    pub fn price_for(&self, j: usize, x: &[f64]) -> f64 {
        let (lo, hi) = self.p_bounds;
        match &self.estimates[j] {
            Some((b0, b1)) => optimal_price(x, b0, b1, lo, hi),
            None => hi,
        }
    }

    /// One arrival; returns `(instance, experiment index or 0, price, regret)`.
    pub fn step<E: PricingEnvironment + ?Sized>(&mut self, env: &mut E) -> (usize, usize, f64, f64) {
        self.t += 1;
        let t = self.t;
        let j = env.next_arrival();
        let x = env.next_context();
        self.arrivals[j] += 1;
        let forced = is_forced_period(self.arrivals[j]);
        let price = match forced {
            Some(i) => self.experimental_prices[i - 1],
            None => self.price_for(j, &x),
        };
        let regret = env.model().regret(j, &x, price);
        if is_update_time(t, self.instances) {
            self.update(t);
        }
        let demand = env.demand(j, &x, price);
        if forced.is_some() {
            self.forced[j].push(Observation { t, x, price, demand });
        }
        (j, forced.unwrap_or(0), price, regret)
    }

    fn update(&mut self, t: usize) {
        let gamma = self.last_update.replace(t);
        let Some(gamma) = gamma else { return };
        let d2 = 2 * self.dim;
        let scale = self.config.price_scale;
        let mut tasks = Vec::new();
        for (j, obs) in self.forced.iter().enumerate() {
            let used: Vec<&Observation> = obs.iter().filter(|o| o.t < gamma).collect();
            if used.is_empty() {
                continue;
            }
            let mut values = Vec::with_capacity(used.len() * d2);
            for o in &used {
                values.extend_from_slice(&o.x);
                values.extend(o.x.iter().map(|v| v * o.price / scale));
            }
            let x = DesignMatrix::from_row_major(used.len(), d2, values).expect("consistent shape");
            let y = used.iter().map(|o| o.demand).collect();
            tasks.push(TaskDataset::new(j, x, y).expect("consistent shape"));
        }
        if tasks.is_empty() {
            return;
        }
        let lambdas: BTreeMap<usize, f64> = tasks
            .iter()
            .map(|task| {
                let m = task.len() as f64;
                let l = self.config.lambda0_of(task.instance_id)
                    * m.powf(0.25)
                    * (d2 as f64 * m).ln().max(0.0).sqrt();
                (task.instance_id, l)
            })
            .collect();
        let fitted = match self.estimator {
            PricingEstimator::Robust => {
                let m_min = tasks.iter().map(|t| t.len()).min().expect("nonempty") as f64;
                let eta = self.config.eta0 * (d2 as f64 * m_min).ln().max(0.0).sqrt();
                TrimFraction::clamped(self.config.zeta0 + eta, MAX_TRIM_FRACTION)
                    .and_then(|omega| {
                        let hyper = EstimatorHyper::new(lambdas, omega)
                            .with_singular_policy(self.config.singular_policy);
                        fit_robust_multitask(&tasks, &hyper)
                    })
                    .map(|r| r.per_instance.into_iter().collect::<Vec<_>>())
            }
            PricingEstimator::Ols => tasks
                .iter()
                .map(|task| {
                    step_one_estimate(task, self.config.singular_policy)?
                        .map(|b| (task.instance_id, b))
                        .ok_or(Error::SingularDesign {
                            instance: Some(task.instance_id),
                            min_eigenvalue: 0.0,
                        })
                })
                .collect(),
            PricingEstimator::Lasso => tasks
                .iter()
                .map(|task| {
                    let zero = vec![0.0; d2];
                    lasso_fit(&task.x, &task.y, lambdas[&task.instance_id], &zero)
                        .map(|b| (task.instance_id, b))
                })
                .collect(),
        };
        match fitted {
            Ok(betas) => {
                for (j, b) in betas {
                    let b0 = b[..self.dim].to_vec();
                    let b1 = b[self.dim..].iter().map(|v| v / scale).collect();
                    self.estimates[j] = Some((b0, b1));
                }
                self.updates.push(t);
            }
            Err(e) => {
                log::warn!("pricing refit at t = {t} failed: {e}");
                self.failures.push((t, e.to_string()));
            }
        }
    }
}

/// Full pricing run. Trace `arm` holds the experiment index (0 = free price).
pub fn run_rmx<E: PricingEnvironment + ?Sized>(
    env: &mut E,
    config: &RmxConfig,
    estimator: PricingEstimator,
    seed: u64,
) -> Result<(RegretTrace, RmxEngine)> {
    let mut engine = RmxEngine::new(config.clone(), estimator, env.model())?;
    let hash = serde_json::to_string(config).expect("config serializes");
    let mut trace = RegretTrace::new(estimator.name(), seed, short_hash(&hash), engine.instances)
        .with_capacity(config.horizon);
    for _ in 0..config.horizon {
        let (j, exp, _, regret) = engine.step(env);
        trace.record(j, exp, regret);
    }
    Ok((trace, engine))
}

fn short_hash(s: &str) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(s.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
