use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::environment::BanditEnvironment;
use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;
use crate::linreg::{lasso_fit, TrimFraction};
use crate::multitask::{robust_center, step_one_estimate, TaskDataset};
use crate::trace::RegretTrace;

use super::config::{BanditConfig, HyperPathState};
use super::policy::{choose_arm, filter_arms, forced_arm};
use super::schedule::BatchSchedule;

/// Estimator used for the forced-sample and all-sample fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Robust multitask estimator pooled over `Q_j`.
    Robust,
    /// Per-instance OLS.
    Ols,
    /// Per-instance LASSO centered at zero.
    Lasso,
    /// Per-instance LASSO centered at the instance's own OLS estimate.
    LassoOwnOls,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Robust => "rmbandit",
            EstimatorKind::Ols => "ols_bandit",
            EstimatorKind::Lasso => "lasso_bandit",
            EstimatorKind::LassoOwnOls => "lasso_own_ols_bandit",
        }
    }
}

/// Baselines that learn each instance alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Ols,
    Lasso,
    LassoOwnOls,
}

impl From<BaselineKind> for EstimatorKind {
    fn from(b: BaselineKind) -> Self {
        match b {
            BaselineKind::Ols => EstimatorKind::Ols,
            BaselineKind::Lasso => EstimatorKind::Lasso,
            BaselineKind::LassoOwnOls => EstimatorKind::LassoOwnOls,
        }
    }
}

/// Current arm parameter estimates, indexed `[instance][arm]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmEstimates {
    pub forced: Vec<Vec<Vec<f64>>>,
    /// `None` until the arm has been fitted at the instance.
    pub all_sample: Vec<Vec<Option<Vec<f64>>>>,
    /// Batch whose data produced the latest all-sample refit.
    pub batch: Option<usize>,
    /// `|B_m^j|` of that batch.
    pub counts: Vec<usize>,
}

/// A non-fatal estimator failure; the previous estimate was kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RefitFailure {
    pub batch: usize,
    pub instance: usize,
    pub arm: usize,
    pub forced: bool,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
struct Buffer {
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Step-by-step executor of the batched policy.
#[derive(Debug, Clone)]
pub struct BanditEngine {
    config: BanditConfig,
    kind: EstimatorKind,
    schedule: BatchSchedule,
    hyper: HyperPathState,
    estimates: ArmEstimates,
    mocked_forced: bool,
    failures: Vec<RefitFailure>,
    /// Observations of the current batch, `[instance][arm]`.
    buffers: Vec<Vec<Buffer>>,
    batch_counts: Vec<usize>,
    arrivals: Vec<usize>,
    t: usize,
}

impl BanditEngine {
    pub fn new(config: BanditConfig, kind: EstimatorKind) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let hyper = HyperPathState::new(&config)?;
        let (n, k, d) = (config.instances, config.arms, config.dim);
        Ok(Self {
            kind,
            schedule,
            hyper,
            estimates: ArmEstimates {
                forced: vec![vec![vec![0.0; d]; k]; n],
                all_sample: vec![vec![None; k]; n],
                batch: None,
                counts: vec![0; n],
            },
            mocked_forced: false,
            failures: Vec::new(),
            buffers: vec![vec![Buffer::default(); k]; n],
            batch_counts: vec![0; n],
            arrivals: vec![0; n],
            t: 0,
            config,
        })
    }

    /// Replace the forced-sample estimates; they are then not fitted at the
    /// end of the forced window.
    pub fn with_forced_estimates(mut self, forced: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let (n, k, d) = (self.config.instances, self.config.arms, self.config.dim);
        let ok = forced.len() == n
            && forced.iter().all(|arms| arms.len() == k && arms.iter().all(|b| b.len() == d));
        if !ok {
            return Err(Error::InvalidInput(format!(
                "forced estimates must have shape {n} x {k} x {d}"
            )));
        }
        self.estimates.forced = forced;
        self.mocked_forced = true;
        Ok(self)
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn schedule(&self) -> &BatchSchedule {
        &self.schedule
    }

    pub fn estimates(&self) -> &ArmEstimates {
        &self.estimates
    }

    pub fn hyper(&self) -> &HyperPathState {
        &self.hyper
    }

    pub fn failures(&self) -> &[RefitFailure] {
        &self.failures
    }

    /// Steps taken so far.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }

    /// Arm chosen for context `x` at instance `j` outside the forced window.
    pub fn decide(&self, j: usize, x: &[f64]) -> usize {
        let forced = &self.estimates.forced[j];
        let candidates = filter_arms(x, forced, self.config.h);
        choose_arm(x, &candidates, &self.estimates.all_sample[j], forced)
    }

    /// Advance one time step, recording the expected regret in `trace`.
    pub fn step<E: BanditEnvironment + ?Sized>(&mut self, env: &mut E, trace: &mut RegretTrace) {
        self.t += 1;
        let t = self.t;
        let j = env.next_arrival();
        let x = env.next_context(j);
        self.arrivals[j] += 1;
        let arm = if self.schedule.in_forced_window(t) {
            forced_arm(self.arrivals[j], self.config.arms)
        } else {
            self.decide(j, &x)
        };
        let regret = env.regret(j, arm, &x);
        let y = env.pull(j, arm, &x);
        let buf = &mut self.buffers[j][arm];
        buf.x.extend_from_slice(&x);
        buf.y.push(y);
        self.batch_counts[j] += 1;
        trace.record(j, arm, regret);

        let m = self.schedule.batch_of(t);
        if t == self.schedule.end_of(m) {
            self.end_of_batch(m);
        }
    }

    fn end_of_batch(&mut self, m: usize) {
        let counts = std::mem::replace(&mut self.batch_counts, vec![0; self.config.instances]);
        if m == 0 {
            if !self.mocked_forced {
                let lambdas: Vec<f64> = (0..self.config.instances)
                    .map(|j| self.config.lambda0_of(j))
                    .collect();
                let omega = self.hyper.omega0;
                for (j, k, res) in self.fit_all(&lambdas, omega) {
                    match res {
                        Ok(beta) => self.estimates.forced[j][k] = beta,
                        Err(e) => self.record_failure(m, j, k, true, e),
                    }
                }
            }
        } else if let Err(e) = self.hyper.advance(&self.config, &counts) {
            self.record_failure(m, 0, 0, false, e);
        }
        let lambdas = self.hyper.lambda1.clone();
        let omega = self.hyper.omega1();
        for (j, k, res) in self.fit_all(&lambdas, omega) {
            match res {
                Ok(beta) => self.estimates.all_sample[j][k] = Some(beta),
                Err(e) => self.record_failure(m, j, k, false, e),
            }
        }
        self.estimates.batch = Some(m);
        self.estimates.counts = counts;
        for arms in &mut self.buffers {
            for b in arms {
                b.x.clear();
                b.y.clear();
            }
        }
    }

    fn record_failure(&mut self, batch: usize, instance: usize, arm: usize, forced: bool, e: Error) {
        log::warn!("batch {batch}: refit of instance {instance} arm {arm} failed: {e}");
        self.failures.push(RefitFailure {
            batch,
            instance,
            arm,
            forced,
            error: e.to_string(),
        });
    }

    fn dataset(&self, j: usize, k: usize) -> Option<TaskDataset<f64>> {
        let b = &self.buffers[j][k];
        if b.y.is_empty() {
            return None;
        }
        let x = DesignMatrix::from_row_major(b.y.len(), self.config.dim, b.x.clone()).ok()?;
        TaskDataset::new(j, x, b.y.clone()).ok()
    }

    /// Fits every `(j, k)` with data in the current batch.
    fn fit_all(&self, lambdas: &[f64], omega: TrimFraction) -> Vec<(usize, usize, Result<Vec<f64>>)> {
        let n = self.config.instances;
        let mut out = Vec::new();
        for k in 0..self.config.arms {
            let tasks: Vec<Option<TaskDataset<f64>>> = (0..n).map(|j| self.dataset(j, k)).collect();
            match self.kind {
                EstimatorKind::Robust => {
                    // Step-1 estimates per instance, and one center per pool.
                    let mut step_one: Vec<Option<Result<Option<Vec<f64>>>>> = vec![None; n];
                    let mut centers: BTreeMap<BTreeSet<usize>, Result<Vec<f64>>> = BTreeMap::new();
                    for j in 0..n {
                        let Some(task) = &tasks[j] else { continue };
                        let pool: BTreeSet<usize> = self
                            .config
                            .subset_of(j)
                            .into_iter()
                            .filter(|&i| tasks[i].is_some())
                            .collect();
                        if !centers.contains_key(&pool) {
                            for &i in &pool {
                                if step_one[i].is_none() {
                                    let t = tasks[i].as_ref().expect("pool has data");
                                    step_one[i] = Some(step_one_estimate(t, self.config.singular_policy));
                                }
                            }
                            let center = self.robust_center_of(&pool, &step_one, omega);
                            centers.insert(pool.clone(), center);
                        }
                        let res = match &centers[&pool] {
                            Ok(center) => lasso_fit(&task.x, &task.y, lambdas[j], center),
                            Err(e) => Err(e.clone()),
                        };
                        out.push((j, k, res));
                    }
                }
                kind => {
                    for (j, task) in tasks.iter().enumerate() {
                        if let Some(task) = task {
                            out.push((j, k, self.fit_single(kind, task, lambdas[j])));
                        }
                    }
                }
            }
        }
        out
    }

    fn robust_center_of(
        &self,
        pool: &BTreeSet<usize>,
        step_one: &[Option<Result<Option<Vec<f64>>>>],
        omega: TrimFraction,
    ) -> Result<Vec<f64>> {
        let mut estimates = Vec::with_capacity(pool.len());
        for &i in pool {
            if self.config.exclude_data_poor == Some(i) {
                continue;
            }
            match step_one[i].as_ref().expect("computed for pool") {
                Ok(Some(b)) => estimates.push(b.as_slice()),
                Ok(None) => {}
                Err(e) => return Err(e.clone()),
            }
        }
        robust_center(&estimates, omega)
    }

    fn fit_single(&self, kind: EstimatorKind, task: &TaskDataset<f64>, lambda: f64) -> Result<Vec<f64>> {
        let own_ols = || {
            step_one_estimate(task, self.config.singular_policy)?.ok_or(Error::SingularDesign {
                instance: Some(task.instance_id),
                min_eigenvalue: 0.0,
            })
        };
        match kind {
            EstimatorKind::Ols => own_ols(),
            EstimatorKind::Lasso => {
                let zero = vec![0.0; self.config.dim];
                lasso_fit(&task.x, &task.y, lambda, &zero)
            }
            EstimatorKind::LassoOwnOls => lasso_fit(&task.x, &task.y, lambda, &own_ols()?),
            EstimatorKind::Robust => unreachable!("pooled fits go through fit_robust"),
        }
    }
}

fn check_env<E: BanditEnvironment + ?Sized>(env: &E, config: &BanditConfig) -> Result<()> {
    if env.instances() != config.instances || env.arms() != config.arms || env.dim() != config.dim {
        return Err(Error::InvalidConfig(format!(
            "environment has (N, K, d) = ({}, {}, {}), config has ({}, {}, {})",
            env.instances(),
            env.arms(),
            env.dim(),
            config.instances,
            config.arms,
            config.dim
        )));
    }
    Ok(())
}

/// Runs `engine` to the horizon on `env`.
pub fn run_engine<E: BanditEnvironment + ?Sized>(
    engine: &mut BanditEngine,
    env: &mut E,
    seed: u64,
) -> Result<RegretTrace> {
    check_env(env, engine.config())?;
    let mut trace = RegretTrace::new(
        engine.kind.name(),
        seed,
        engine.config().hash(),
        engine.config().instances,
    )
    .with_capacity(engine.config().horizon);
    while !engine.is_done() {
        engine.step(env, &mut trace);
    }
    Ok(trace)
}

/// RMBandit on `env`; `seed` labels the trace (the environment owns the randomness).
pub fn run_rmbandit<E: BanditEnvironment + ?Sized>(
    env: &mut E,
    config: &BanditConfig,
    seed: u64,
) -> Result<RegretTrace> {
    let mut engine = BanditEngine::new(config.clone(), EstimatorKind::Robust)?;
    run_engine(&mut engine, env, seed)
}

/// Same control flow as RMBandit with each instance learning alone.
pub fn run_baseline_bandit<E: BanditEnvironment + ?Sized>(
    kind: BaselineKind,
    env: &mut E,
    config: &BanditConfig,
    seed: u64,
) -> Result<RegretTrace> {
    let mut engine = BanditEngine::new(config.clone(), kind.into())?;
    run_engine(&mut engine, env, seed)
}
