use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rmbandit_cli::summary::{read_trace, RunCurve};
use rmbandit_cli::{run_experiment, summarize, ExperimentConfig};

/// Default output directory when neither `--out-dir` nor `out_dir` is given.
const OUT_DIR_VAR: &str = "RMBANDIT_OUT_DIR";

#[derive(Parser)]
#[command(name = "rmbandit", version, about = "Seeded multitask bandit and pricing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and list every problem found.
    Validate { config: PathBuf },
    /// Run every (algorithm, seed) of a config; write traces and summary.json.
    Run {
        config: PathBuf,
        /// Seeds overriding the config, e.g. `0..15` or `1,4,9`.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory; falls back to `out_dir` in the config, then to $RMBANDIT_OUT_DIR, then `runs`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads; default is the number of available cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Keep every n-th step in trace files.
        #[arg(long)]
        thin: Option<usize>,
    },
    /// Summarize trace files (paths or glob patterns) into one summary file.
    Summarize {
        #[arg(required = true)]
        traces: Vec<String>,
        /// Output file; default `summary.json` next to the first trace.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b <= a {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad seed {v:?}")))
        .collect()
}

/// Parses and checks a config, printing located diagnostics.
fn load(path: &PathBuf) -> Result<Option<ExperimentConfig>> {
    let source = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = match ExperimentConfig::parse(&source) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Ok(None);
        }
    };
    let diags = cfg.diagnostics(&source);
    for d in &diags {
        eprintln!("{}: {d}", path.display());
    }
    Ok(diags.is_empty().then_some(cfg))
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let matches: Vec<PathBuf> = glob::glob(p)?.collect::<std::result::Result<_, _>>()?;
        if matches.is_empty() {
            bail!("no trace files match {p}");
        }
        out.extend(matches);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<bool> {
    match Cli::parse().command {
        Command::Validate { config } => {
            let ok = load(&config)?.is_some();
            if ok {
                println!("{}: valid", config.display());
            }
            Ok(ok)
        }
        Command::Run {
            config,
            seeds,
            out_dir,
            workers,
            thin,
        } => {
            let Some(mut cfg) = load(&config)? else { return Ok(false) };
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Some(t) = thin {
                if t == 0 {
                    bail!("--thin must be at least 1");
                }
                cfg.thin = Some(t);
            }
            let out_dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let report = run_experiment(&cfg, &out_dir, workers)?;
            for r in &report.runs {
                match &r.result {
                    Ok(path) => println!("{} seed {}: {}", r.label, r.seed, path.display()),
                    Err(e) => eprintln!("{} seed {}: FAILED: {e:#}", r.label, r.seed),
                }
            }
            if let Some(s) = &report.summary {
                println!("summary: {}", s.display());
            }
            Ok(report.ok())
        }
        Command::Summarize { traces, output } => {
            let paths = expand(&traces)?;
            let curves = paths
                .iter()
                .map(|p| RunCurve::from_rows(&read_trace(p)?).with_context(|| p.display().to_string()))
                .collect::<Result<Vec<_>>>()?;
            let output = output.unwrap_or_else(|| paths[0].with_file_name("summary.json"));
            summarize(&curves).write(&output)?;
            println!("summary: {}", output.display());
            Ok(true)
        }
    }
}
