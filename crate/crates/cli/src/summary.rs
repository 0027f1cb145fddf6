//! Trace files and across-seed summaries.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rmbandit::RegretTrace;

/// One row of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub seed: u64,
    pub algorithm: String,
    pub t: usize,
    pub instance: usize,
    pub arm: usize,
    pub regret_step: f64,
    pub regret_cum_global: f64,
    pub regret_cum_instance: f64,
}

/// 17 significant digits round-trip every f64 exactly.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows kept at thinning `thin`: every `thin`-th step and the last one.
pub fn thinned_rows(trace: &RegretTrace, thin: usize) -> impl Iterator<Item = TraceRow> + '_ {
    let last = trace.len();
    trace
        .steps
        .iter()
        .filter(move |s| s.t.is_multiple_of(thin) || s.t == last)
        .map(|s| TraceRow {
            seed: trace.seed,
            algorithm: trace.algorithm.clone(),
            t: s.t,
            instance: s.instance,
            arm: s.arm,
            regret_step: s.regret,
            regret_cum_global: s.cum_global,
            regret_cum_instance: s.cum_instance,
        })
}

pub fn write_trace(path: &Path, trace: &RegretTrace, thin: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "seed",
        "algorithm",
        "t",
        "instance",
        "arm",
        "regret_step",
        "regret_cum_global",
        "regret_cum_instance",
    ])?;
    for r in thinned_rows(trace, thin) {
        w.write_record([
            r.seed.to_string(),
            r.algorithm,
            r.t.to_string(),
            r.instance.to_string(),
            r.arm.to_string(),
            fmt_float(r.regret_step),
            fmt_float(r.regret_cum_global),
            fmt_float(r.regret_cum_instance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    for w in rows.windows(2) {
        if w[1].t <= w[0].t {
            bail!("{}: rows not ordered by t at t = {}", path.display(), w[1].t);
        }
    }
    Ok(rows)
}

/// Mean and normal-approximation 95% half-width; zero width for one sample.
pub fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub final_mean: f64,
    pub final_ci: f64,
    /// Mean wall-clock seconds per run, when the runs were timed.
    pub wall_clock_mean: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub algorithms: Vec<AlgorithmSummary>,
}

impl SummaryStats {
    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

/// Cumulative global regret of one run at its recorded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub algorithm: String,
    pub seed: u64,
    pub points: Vec<(usize, f64)>,
    pub wall_clock: Option<f64>,
}

impl RunCurve {
    pub fn from_trace(trace: &RegretTrace, thin: usize, wall_clock: Option<f64>) -> Self {
        Self {
            algorithm: trace.algorithm.clone(),
            seed: trace.seed,
            points: thinned_rows(trace, thin).map(|r| (r.t, r.regret_cum_global)).collect(),
            wall_clock,
        }
    }

    pub fn from_rows(rows: &[TraceRow]) -> Result<Self> {
        let first = rows.first().context("empty trace")?;
        if rows.iter().any(|r| r.seed != first.seed || r.algorithm != first.algorithm) {
            bail!("trace mixes seeds or algorithms");
        }
        Ok(Self {
            algorithm: first.algorithm.clone(),
            seed: first.seed,
            points: rows.iter().map(|r| (r.t, r.regret_cum_global)).collect(),
            wall_clock: None,
        })
    }
}

/// Per algorithm: mean and 95% band at every timestep recorded by all seeds.
pub fn summarize(runs: &[RunCurve]) -> SummaryStats {
    let mut groups: BTreeMap<&str, Vec<&RunCurve>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.algorithm).or_default().push(r);
    }
    let algorithms = groups
        .into_iter()
        .map(|(name, group)| {
            let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in &group {
                for &(t, v) in &r.points {
                    by_t.entry(t).or_default().push(v);
                }
            }
            let curve = by_t
                .into_iter()
                .filter(|(_, v)| v.len() == group.len())
                .map(|(t, v)| {
                    let (mean, h) = mean_ci(&v);
                    CurvePoint {
                        t,
                        mean,
                        ci_low: mean - h,
                        ci_high: mean + h,
                    }
                })
                .collect();
            let finals: Vec<f64> = group.iter().map(|r| r.points.last().map_or(0.0, |p| p.1)).collect();
            let (final_mean, final_ci) = mean_ci(&finals);
            let clocks: Vec<f64> = group.iter().filter_map(|r| r.wall_clock).collect();
            let wall_clock_mean = (clocks.len() == group.len()).then(|| clocks.iter().sum::<f64>() / clocks.len() as f64);
            let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            AlgorithmSummary {
                algorithm: name.to_string(),
                seeds,
                final_mean,
                final_ci,
                wall_clock_mean,
                curve,
            }
        })
        .collect();
    SummaryStats { algorithms }
}
