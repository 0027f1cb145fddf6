//! Fans runs out over a worker pool and writes traces and the summary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use rmbandit::bandit::{run_engine, BanditEngine};
use rmbandit::environment::{sample_task_dataset, select_instances, SimilarityGraph, SyntheticEnv};
use rmbandit::linalg::l1_distance;
use rmbandit::multitask::{
    fit_averaging, fit_pooling, fit_robust_multitask, step_one_estimate, EstimatorHyper,
};
use rmbandit::pricing::{run_rmx, PricingEnv};
use rmbandit::rng::{stream_rng, Stream};
use rmbandit::{RegretTrace, SingularPolicy, TrimFraction};

use crate::config::{Algorithm, ExperimentConfig, Scenario};
use crate::summary::{mean_ci, summarize, write_trace, RunCurve};

/// Outcome of one `(algorithm, seed)` run.
#[derive(Debug)]
pub struct RunReport {
    pub label: String,
    pub seed: u64,
    pub result: Result<PathBuf>,
}

/// Everything `run` produced; `ok()` is false if any run failed.
#[derive(Debug)]
pub struct BatchReport {
    pub runs: Vec<RunReport>,
    pub summary: Option<PathBuf>,
}

impl BatchReport {
    pub fn ok(&self) -> bool {
        self.summary.is_some() && self.runs.iter().all(|r| r.result.is_ok())
    }
}

pub fn trace_file_name(algorithm: &str, seed: u64) -> String {
    format!("{algorithm}_seed{seed}.csv")
}

fn simulate(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> Result<RegretTrace> {
    if let Some(est) = algorithm.pricing_estimator() {
        let mut env = PricingEnv::new(&cfg.pricing_spec(), seed)?;
        let (trace, engine) = run_rmx(&mut env, &cfg.rmx_config(), est, seed)?;
        if !engine.failures.is_empty() {
            log::warn!("{} seed {seed}: {} refits kept the previous estimate", algorithm.name(), engine.failures.len());
        }
        return Ok(trace);
    }
    let kind = algorithm.bandit_kind().ok_or_else(|| anyhow!("{} is not a bandit algorithm", algorithm.name()))?;
    let mut env = SyntheticEnv::new(cfg.env_spec(), seed)?;
    let mut bandit = cfg.bandit_config(algorithm);
    if cfg.scenario == Scenario::Network && algorithm == Algorithm::Rmbandit {
        let graph = SimilarityGraph::from_truth(env.truth());
        let s_tilde = cfg.network.s_tilde.unwrap_or(0);
        bandit.instance_subsets = Some((0..graph.len()).map(|j| select_instances(&graph, j, s_tilde)).collect());
    }
    let mut engine = BanditEngine::new(bandit, kind)?;
    let trace = run_engine(&mut engine, &mut env, seed)?;
    if !engine.failures().is_empty() {
        log::warn!("{} seed {seed}: {} refits kept the previous estimate", algorithm.name(), engine.failures().len());
    }
    Ok(trace)
}

/// Runs every `(algorithm, seed)` of `cfg` on `workers` threads and writes
/// one trace per run plus `summary.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<BatchReport> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    if cfg.scenario == Scenario::StaticEstimators {
        return pool.install(|| run_static(cfg, out_dir));
    }
    let thin = cfg.thin();
    let jobs: Vec<(Algorithm, u64)> = cfg
        .algorithms()
        .into_iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<(RunReport, Option<RunCurve>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, seed)| {
                let start = Instant::now();
                let outcome = simulate(cfg, a, seed).and_then(|trace| {
                    let secs = start.elapsed().as_secs_f64();
                    let path = out_dir.join(trace_file_name(a.name(), seed));
                    write_trace(&path, &trace, thin)?;
                    Ok((path, RunCurve::from_trace(&trace, thin, Some(secs))))
                });
                let label = a.name().to_string();
                match outcome {
                    Ok((path, curve)) => (RunReport { label, seed, result: Ok(path) }, Some(curve)),
                    Err(e) => (RunReport { label, seed, result: Err(e) }, None),
                }
            })
            .collect()
    });
    let curves: Vec<RunCurve> = results.iter().filter_map(|r| r.1.clone()).collect();
    let runs: Vec<RunReport> = results.into_iter().map(|r| r.0).collect();
    let summary = if curves.is_empty() {
        None
    } else {
        let path = out_dir.join("summary.json");
        summarize(&curves).write(&path)?;
        Some(path)
    };
    Ok(BatchReport { runs, summary })
}

#[derive(Debug, Serialize)]
struct StaticRow {
    seed: u64,
    estimator: &'static str,
    n: usize,
    draw: usize,
    instance: usize,
    l1_error: f64,
}

#[derive(Debug, Serialize)]
struct StaticPoint {
    estimator: String,
    n: usize,
    mean_l1_error: f64,
    ci: f64,
    samples: usize,
}

/// l1 errors of each estimator on the first arm's parameters, per draw.
fn static_rows(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<StaticRow>> {
    let spec = cfg.env_spec();
    let section = cfg.static_section();
    let env = SyntheticEnv::new(spec.clone(), seed)?;
    let truth = env.truth();
    let betas: Vec<&[f64]> = (0..spec.instances).map(|j| truth.arm_param(j, 0)).collect();
    let omega = TrimFraction::new(section.omega)?;
    let mut rng = stream_rng(seed, Stream::Auxiliary);
    let mut rows = Vec::new();
    for &n in &section.sample_sizes {
        for draw in 0..section.draws {
            let tasks: Vec<_> = betas
                .iter()
                .enumerate()
                .map(|(j, b)| sample_task_dataset(j, b, n, spec.sigma_of(j), spec.x_max, &mut rng))
                .collect();
            let lambdas: BTreeMap<usize, f64> = (0..spec.instances)
                .map(|j| (j, section.lambda_scale * spec.sigma_of(j) * ((spec.dim as f64).ln() / n as f64).sqrt()))
                .collect();
            let hyper = EstimatorHyper::new(lambdas.clone(), omega).with_singular_policy(SingularPolicy::MinNorm);
            let rm = fit_robust_multitask(&tasks, &hyper)?;
            // Plain mean in Step 1: the averaging multitask estimator.
            let am = fit_robust_multitask(
                &tasks,
                &EstimatorHyper::new(lambdas, TrimFraction::ZERO).with_singular_policy(SingularPolicy::MinNorm),
            )?;
            let avg = fit_averaging(&tasks)?;
            let pool = fit_pooling(&tasks)?;
            for (j, beta) in betas.iter().enumerate() {
                let own = step_one_estimate(&tasks[j], SingularPolicy::MinNorm)?.unwrap_or_default();
                let mut row = |estimator, est: &[f64]| {
                    rows.push(StaticRow {
                        seed,
                        estimator,
                        n,
                        draw,
                        instance: j,
                        l1_error: l1_distance(est, beta),
                    })
                };
                row("robust_multitask", &rm.per_instance[&j]);
                row("averaging_multitask", &am.per_instance[&j]);
                row("averaging", &avg);
                row("pooling", &pool);
                row("independent", &own);
            }
        }
    }
    Ok(rows)
}

fn run_static(cfg: &ExperimentConfig, out_dir: &Path) -> Result<BatchReport> {
    let results: Vec<(u64, Result<Vec<StaticRow>>)> =
        cfg.seeds.par_iter().map(|&seed| (seed, static_rows(cfg, seed))).collect();
    let mut runs = Vec::new();
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for (seed, result) in results {
        let written = result.and_then(|rows| {
            let path = out_dir.join(format!("static_seed{seed}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            for r in &rows {
                w.serialize(r)?;
                groups.entry((r.estimator.to_string(), r.n)).or_default().push(r.l1_error);
            }
            w.flush()?;
            Ok(path)
        });
        runs.push(RunReport {
            label: "static_estimators".into(),
            seed,
            result: written,
        });
    }
    let points: Vec<StaticPoint> = groups
        .into_iter()
        .map(|((estimator, n), v)| {
            let (mean, ci) = mean_ci(&v);
            StaticPoint {
                estimator,
                n,
                mean_l1_error: mean,
                ci,
                samples: v.len(),
            }
        })
        .collect();
    let summary = if points.is_empty() {
        None
    } else {
        let path = out_dir.join("summary.json");
        serde_json::to_writer_pretty(File::create(&path)?, &points)?;
        Some(path)
    };
    Ok(BatchReport { runs, summary })
}
