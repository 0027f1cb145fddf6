//! Test environments and checks shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rmbandit::bandit::{build_schedule, BanditConfig, BanditEngine, EstimatorKind};
use rmbandit::environment::{sample_reward, BanditEnvironment, EnvSpec, SyntheticEnv};
use rmbandit::linalg::DesignMatrix;
use rmbandit::rng::{stream_rng, Stream};
use rmbandit::{fit_robust_multitask, EstimatorHyper, RegretTrace, SingularPolicy, TaskDataset, TrimFraction};

/// Contexts `[1, u]` with `|u|` uniform on `[u_min, 1]` and a random sign;
/// uniform arrivals.
pub struct LineEnv {
    pub params: Vec<Vec<Vec<f64>>>,
    pub sigma: f64,
    pub u_min: f64,
    arrivals: ChaCha8Rng,
    contexts: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl LineEnv {
    pub fn new(params: Vec<Vec<Vec<f64>>>, sigma: f64, u_min: f64, seed: u64) -> Self {
        Self {
            params,
            sigma,
            u_min,
            arrivals: stream_rng(seed, Stream::Arrivals),
            contexts: stream_rng(seed, Stream::Contexts),
            noise: stream_rng(seed, Stream::Noise),
        }
    }
}

impl BanditEnvironment for LineEnv {
    fn instances(&self) -> usize {
        self.params.len()
    }

    fn arms(&self) -> usize {
        self.params[0].len()
    }

    fn dim(&self) -> usize {
        2
    }

    fn next_arrival(&mut self) -> usize {
        self.arrivals.random_range(0..self.params.len())
    }

    fn next_context(&mut self, _instance: usize) -> Vec<f64> {
        let mag = self.contexts.random_range(self.u_min..=1.0);
        let sign = if self.contexts.random::<bool>() { 1.0 } else { -1.0 };
        vec![1.0, sign * mag]
    }

    fn pull(&mut self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        let mean = self.mean_reward(instance, arm, x);
        sample_reward(mean, self.sigma, &mut self.noise)
    }

    fn mean_reward(&self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        rmbandit::linalg::dot(x, &self.params[instance][arm])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub instance: usize,
    pub x: Vec<f64>,
    pub arm: usize,
    pub y: f64,
}

/// Wraps an environment, logging every observation and adding
/// `perturb(t)` to the reward at step `t`.
pub struct Recording<E> {
    pub inner: E,
    pub log: Vec<Observation>,
    pub perturb: Box<dyn Fn(usize) -> f64>,
    t: usize,
}

impl<E> Recording<E> {
    pub fn new(inner: E) -> Self {
        Self::perturbed(inner, |_| 0.0)
    }

    pub fn perturbed(inner: E, perturb: impl Fn(usize) -> f64 + 'static) -> Self {
        Self {
            inner,
            log: Vec::new(),
            perturb: Box::new(perturb),
            t: 0,
        }
    }
}

impl<E: BanditEnvironment> BanditEnvironment for Recording<E> {
    fn instances(&self) -> usize {
        self.inner.instances()
    }

    fn arms(&self) -> usize {
        self.inner.arms()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn next_arrival(&mut self) -> usize {
        self.t += 1;
        self.inner.next_arrival()
    }

    fn next_context(&mut self, instance: usize) -> Vec<f64> {
        self.inner.next_context(instance)
    }

    fn pull(&mut self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        let y = self.inner.pull(instance, arm, x) + (self.perturb)(self.t);
        self.log.push(Observation {
            t: self.t,
            instance,
            x: x.to_vec(),
            arm,
            y,
        });
        y
    }

    fn mean_reward(&self, instance: usize, arm: usize, x: &[f64]) -> f64 {
        self.inner.mean_reward(instance, arm, x)
    }
}

/// A small synthetic world that finishes in milliseconds.
pub fn small_spec() -> EnvSpec {
    EnvSpec {
        instances: 4,
        arms: 3,
        dim: 3,
        sparsity: 1,
        sigma: vec![0.1],
        ..EnvSpec::standard()
    }
}

pub fn small_config(horizon: usize) -> BanditConfig {
    let mut cfg = BanditConfig::rmbandit_standard(horizon, 4, 3, 3);
    cfg.q = 20.0;
    cfg.h = 0.5;
    cfg
}

/// Step `engine` until time `t_end`.
pub fn step_until<E: BanditEnvironment>(engine: &mut BanditEngine, env: &mut E, trace: &mut RegretTrace, t_end: usize) {
    while engine.time() < t_end {
        engine.step(env, trace);
    }
}

pub fn new_trace(engine: &BanditEngine) -> RegretTrace {
    RegretTrace::new("test", 0, "", engine.config().instances)
}

pub fn gaussian_design(n: usize, d: usize, rng: &mut impl Rng) -> DesignMatrix<f64> {
    let values = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    DesignMatrix::from_row_major(n, d, values).unwrap()
}

// Exact-recovery checks. Each returns a description of the first violation.

/// Zero noise and identical tasks: every per-instance estimate is the truth.
pub fn check_identical_task_recovery() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for case in 0..40 {
        let d = 2 + case % 5;
        let n_tasks = 2 + case % 9;
        let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let omega = TrimFraction::new(rng.random_range(0.0..0.5)).unwrap();
        let lambda = [0.0, 1e-3, 0.1, 1.0, 10.0][case % 5];
        let tasks: Vec<_> = (0..n_tasks)
            .map(|j| {
                let x = gaussian_design(d + 3 + j, d, &mut rng);
                let y = x.mul_vec(&beta);
                TaskDataset::new(j, x, y).unwrap()
            })
            .collect();
        let fit = fit_robust_multitask(&tasks, &EstimatorHyper::uniform(0..n_tasks, lambda, omega))
            .map_err(|e| e.to_string())?;
        for (j, est) in &fit.per_instance {
            let err = est.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-6 {
                return Err(format!("case {case}, task {j}: error {err:e}"));
            }
        }
    }
    Ok(())
}

/// The oracle policy's trace is identically zero.
pub fn check_oracle_trace_zero() -> Result<(), String> {
    for seed in 0..5 {
        let mut env = SyntheticEnv::new(EnvSpec::standard(), seed).unwrap();
        let mut trace = RegretTrace::new("oracle", seed, "", 10);
        for _ in 0..4000 {
            let j = env.next_arrival();
            let x = env.next_context(j);
            let arm = env.oracle_arm(j, &x);
            trace.record(j, arm, env.regret(j, arm, &x));
            env.pull(j, arm, &x);
        }
        if trace.steps.iter().any(|s| s.regret != 0.0) {
            return Err(format!("seed {seed}: nonzero oracle regret"));
        }
    }
    Ok(())
}

/// Batches partition `1..=T` for 100 random `(T, q)`, with doubling lengths.
pub fn check_schedule_coverage() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut checked = 0;
    while checked < 100 {
        let horizon = rng.random_range(2..200_000usize);
        let q = rng.random_range(0.05..100.0);
        let Ok(s) = build_schedule(horizon, q) else { continue };
        checked += 1;
        let mut next = 1;
        let mut seen = BTreeSet::new();
        for m in 0..=s.num_batches() {
            let (a, b) = s.bounds(m);
            if a != next || b < a {
                return Err(format!("T={horizon}, q={q}: batch {m} = [{a}, {b}] after {}", next - 1));
            }
            if m >= 1 && m < s.num_batches() && s.len_of(m) != s.b0_size << (m - 1) {
                return Err(format!("T={horizon}, q={q}: interior batch {m} has length {}", s.len_of(m)));
            }
            for t in a..=b {
                if !seen.insert(t) {
                    return Err(format!("T={horizon}, q={q}: step {t} in two batches"));
                }
            }
            next = b + 1;
        }
        if seen.len() != horizon || next != horizon + 1 {
            return Err(format!("T={horizon}, q={q}: coverage ends at {}", next - 1));
        }
    }
    Ok(())
}

/// Forced estimates at `T` are bit-identical to their value at the end of B0.
pub fn check_forced_immutable() -> Result<(), String> {
    for seed in 0..3 {
        let mut env = SyntheticEnv::new(small_spec(), seed).unwrap();
        let mut engine = BanditEngine::new(small_config(6000), EstimatorKind::Robust).unwrap();
        let mut trace = new_trace(&engine);
        let b0 = engine.schedule().b0_size;
        step_until(&mut engine, &mut env, &mut trace, b0);
        let snapshot = engine.estimates().forced.clone();
        step_until(&mut engine, &mut env, &mut trace, 6000);
        let bits = |v: &Vec<Vec<Vec<f64>>>| -> Vec<u64> { v.iter().flatten().flatten().map(|x| x.to_bits()).collect() };
        if bits(&snapshot) != bits(&engine.estimates().forced) {
            return Err(format!("seed {seed}: forced estimates changed after B0"));
        }
        if snapshot.iter().flatten().flatten().all(|&v| v == 0.0) {
            return Err(format!("seed {seed}: forced estimates were never fitted"));
        }
    }
    Ok(())
}

/// The all-sample estimates in force during batch `m` equal an independent
/// refit on batch `m - 1` data alone.
pub fn check_refit_uses_previous_batch_only() -> Result<(), String> {
    let cfg = small_config(8000);
    let mut env = Recording::new(SyntheticEnv::new(small_spec(), 5).unwrap());
    let mut engine = BanditEngine::new(cfg.clone(), EstimatorKind::Robust).unwrap();
    let mut trace = new_trace(&engine);
    for m in 1..engine.schedule().num_batches() {
        let (start, end) = engine.schedule().bounds(m);
        step_until(&mut engine, &mut env, &mut trace, end);
        let lambdas = engine.hyper().lambda1.clone();
        let omega = engine.hyper().omega1();
        for k in 0..cfg.arms {
            let tasks: Vec<TaskDataset<f64>> = (0..cfg.instances)
                .filter_map(|j| {
                    let obs: Vec<&Observation> = env
                        .log
                        .iter()
                        .filter(|o| o.t >= start && o.t <= end && o.instance == j && o.arm == k)
                        .collect();
                    if obs.is_empty() {
                        return None;
                    }
                    let x = DesignMatrix::from_rows(&obs.iter().map(|o| o.x.clone()).collect::<Vec<_>>()).unwrap();
                    Some(TaskDataset::new(j, x, obs.iter().map(|o| o.y).collect()).unwrap())
                })
                .collect();
            if tasks.is_empty() {
                continue;
            }
            let hyper = EstimatorHyper::new(tasks.iter().map(|t| (t.instance_id, lambdas[t.instance_id])).collect(), omega)
                .with_singular_policy(SingularPolicy::MinNorm);
            let Ok(fit) = fit_robust_multitask(&tasks, &hyper) else { continue };
            for (j, want) in &fit.per_instance {
                if engine.estimates().all_sample[*j][k].as_ref() != Some(want) {
                    return Err(format!("batch {m}, instance {j}, arm {k}: refit differs from batch-only oracle"));
                }
            }
        }
    }
    Ok(())
}

/// Perturbing rewards of batch `m - 2` leaves the estimates fitted on batch
/// `m - 1` bit-identical, when arm choices cannot react to the perturbation
/// (forced estimates exact and `h` tiny, so the filter alone decides).
pub fn check_perturbation_outside_window() -> Result<(), String> {
    let spec = small_spec();
    let mut cfg = small_config(8000);
    cfg.h = 1e-9;
    let run = |perturb: Box<dyn Fn(usize) -> f64>| {
        let base = SyntheticEnv::new(spec.clone(), 6).unwrap();
        let truth: Vec<Vec<Vec<f64>>> = (0..spec.instances)
            .map(|j| (0..spec.arms).map(|k| base.truth().arm_param(j, k).to_vec()).collect())
            .collect();
        let mut env = Recording::perturbed(base, perturb);
        let mut engine = BanditEngine::new(cfg.clone(), EstimatorKind::Robust)
            .unwrap()
            .with_forced_estimates(truth)
            .unwrap();
        let mut trace = new_trace(&engine);
        let mut snapshots = Vec::new();
        for m in 0..=engine.schedule().num_batches() {
            let end = engine.schedule().end_of(m);
            step_until(&mut engine, &mut env, &mut trace, end);
            snapshots.push(engine.estimates().all_sample.clone());
        }
        (trace.arms(), snapshots)
    };
    let sched = cfg.schedule().unwrap();
    let (a1, a2) = sched.bounds(1);
    let (arms_a, snaps_a) = run(Box::new(|_| 0.0));
    let (arms_b, snaps_b) = run(Box::new(move |t| if t >= a1 && t <= a2 { 5.0 } else { 0.0 }));
    if arms_a != arms_b {
        return Err("arm choices reacted to the perturbation".into());
    }
    if snaps_a[1] == snaps_b[1] {
        return Err("perturbing batch 1 did not change the batch-1 fit".into());
    }
    for m in 2..snaps_a.len() {
        if snaps_a[m] != snaps_b[m] {
            return Err(format!("fit on batch {m} depends on batch-1 rewards"));
        }
    }
    Ok(())
}

/// Perturbing rewards from the start of batch `m` on cannot change any
/// choice made up to the end of batch `m`.
pub fn check_current_batch_rewards_unused() -> Result<(), String> {
    let cfg = small_config(8000);
    let sched = cfg.schedule().unwrap();
    for m in 1..sched.num_batches() {
        let (start, end) = sched.bounds(m);
        let run = |perturb: Box<dyn Fn(usize) -> f64>| {
            let mut env = Recording::perturbed(SyntheticEnv::new(small_spec(), 7).unwrap(), perturb);
            let mut engine = BanditEngine::new(cfg.clone(), EstimatorKind::Robust).unwrap();
            let mut trace = new_trace(&engine);
            step_until(&mut engine, &mut env, &mut trace, cfg.horizon);
            trace.arms()
        };
        let base = run(Box::new(|_| 0.0));
        let pert = run(Box::new(move |t| if t >= start { 3.0 * ((t % 7) as f64 - 3.0) } else { 0.0 }));
        if base[..end] != pert[..end] {
            return Err(format!("batch {m}: choices depend on same-batch rewards"));
        }
        if base == pert {
            return Err(format!("batch {m}: perturbation had no effect at all"));
        }
    }
    Ok(())
}

/// Identical `(config, seed)` gives byte-identical serialized traces.
pub fn check_determinism() -> Result<(), String> {
    let run = |seed: u64| {
        let mut env = SyntheticEnv::new(small_spec(), seed).unwrap();
        let mut engine = BanditEngine::new(small_config(5000), EstimatorKind::Robust).unwrap();
        rmbandit::bandit::run_engine(&mut engine, &mut env, seed).unwrap()
    };
    for seed in 0..3 {
        let a = serde_json::to_string(&run(seed)).unwrap();
        let b = serde_json::to_string(&run(seed)).unwrap();
        if a != b {
            return Err(format!("seed {seed}: traces differ"));
        }
    }
    if serde_json::to_string(&run(0)).unwrap() == serde_json::to_string(&run(1)).unwrap() {
        return Err("different seeds gave identical traces".into());
    }
    Ok(())
}

/// Mean and half-width of the normal-approximation 95% interval.
pub fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
