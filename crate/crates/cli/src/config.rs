//! Experiment configuration: a TOML document with a scenario preset and
//! optional per-section overrides. Unknown keys are errors.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rmbandit::bandit::{BanditConfig, BaselineKind, EstimatorKind};
use rmbandit::environment::{DataPoor, EnvSpec};
use rmbandit::pricing::{PricingEnv, PricingEstimator, PricingSpec, RmxConfig};
use rmbandit::{SingularPolicy, TrimFraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Standard,
    DataPoor,
    Network,
    Pricing,
    StaticEstimators,
}

/// Algorithms selectable in `algorithms = [...]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rmbandit,
    OlsBandit,
    LassoBandit,
    Rmx,
    Ilsx,
    Ilqx,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rmbandit => EstimatorKind::Robust.name(),
            Algorithm::OlsBandit => EstimatorKind::Ols.name(),
            Algorithm::LassoBandit => EstimatorKind::Lasso.name(),
            Algorithm::Rmx => PricingEstimator::Robust.name(),
            Algorithm::Ilsx => PricingEstimator::Ols.name(),
            Algorithm::Ilqx => PricingEstimator::Lasso.name(),
        }
    }

    pub fn is_pricing(self) -> bool {
        matches!(self, Algorithm::Rmx | Algorithm::Ilsx | Algorithm::Ilqx)
    }

    pub fn bandit_kind(self) -> Option<EstimatorKind> {
        match self {
            Algorithm::Rmbandit => Some(EstimatorKind::Robust),
            Algorithm::OlsBandit => Some(BaselineKind::Ols.into()),
            Algorithm::LassoBandit => Some(BaselineKind::Lasso.into()),
            _ => None,
        }
    }

    pub fn pricing_estimator(self) -> Option<PricingEstimator> {
        match self {
            Algorithm::Rmx => Some(PricingEstimator::Robust),
            Algorithm::Ilsx => Some(PricingEstimator::Ols),
            Algorithm::Ilqx => Some(PricingEstimator::Lasso),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOverrides {
    pub instances: Option<usize>,
    pub arms: Option<usize>,
    pub dim: Option<usize>,
    pub sparsity: Option<usize>,
    pub arrival_probs: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub x_max: Option<f64>,
    pub bias_range: Option<(f64, f64)>,
    pub data_poor: Option<DataPoor>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditOverrides {
    pub q: Option<f64>,
    pub h: Option<f64>,
    pub zeta0: Option<f64>,
    pub eta0: Option<f64>,
    pub zeta10: Option<f64>,
    pub eta10: Option<f64>,
    pub lambda0: Option<Vec<f64>>,
    pub lambda10: Option<Vec<f64>>,
    pub exclude_data_poor: Option<usize>,
    pub singular_policy: Option<SingularPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Instances `i` with `s_ij <= s_tilde` are pooled for instance `j`.
    pub s_tilde: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingOverrides {
    pub instances: Option<usize>,
    pub dim: Option<usize>,
    pub sparsity: Option<usize>,
    pub sigma: Option<f64>,
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub experimental_prices: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmxOverrides {
    pub zeta0: Option<f64>,
    pub eta0: Option<f64>,
    pub lambda0: Option<Vec<f64>>,
    pub price_scale: Option<f64>,
    pub singular_policy: Option<SingularPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticSection {
    /// Samples per task at each Monte-Carlo point.
    pub sample_sizes: Vec<usize>,
    /// Independent draws per seed and sample size.
    #[serde(default = "one")]
    pub draws: usize,
    pub omega: f64,
    /// `lambda = lambda_scale * sigma * sqrt(ln d / n)`.
    pub lambda_scale: f64,
}

fn one() -> usize {
    1
}

impl Default for StaticSection {
    fn default() -> Self {
        Self {
            sample_sizes: vec![100, 400, 1600],
            draws: 1,
            omega: 0.3,
            lambda_scale: 2.0,
        }
    }
}

/// Raw experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    /// Steps per run; unused by the static scenario.
    #[serde(default)]
    pub horizon: usize,
    /// Defaults to every algorithm of the scenario.
    #[serde(default)]
    pub algorithms: Option<Vec<Algorithm>>,
    /// Keep every `thin`-th step in trace files (and the last step).
    #[serde(default)]
    pub thin: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvOverrides,
    #[serde(default)]
    pub rmbandit: BanditOverrides,
    #[serde(default)]
    pub baseline: BanditOverrides,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub pricing: PricingOverrides,
    #[serde(default)]
    pub rmx: RmxOverrides,
    #[serde(default, rename = "static")]
    pub static_estimators: Option<StaticSection>,
}

/// Parse failure with a 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// One semantic problem, located at the line defining `field` when found.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of the first `key =` assignment, searching inside `[section]` when given.
fn line_of_key(source: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        if k.trim() == key && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        toml::from_str(source).map_err(|e| ParseError {
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        self.algorithms.clone().unwrap_or_else(|| match self.scenario {
            Scenario::Pricing => vec![Algorithm::Rmx, Algorithm::Ilsx, Algorithm::Ilqx],
            Scenario::StaticEstimators => Vec::new(),
            _ => vec![Algorithm::Rmbandit, Algorithm::OlsBandit, Algorithm::LassoBandit],
        })
    }

    /// Thinning interval: every step up to T = 1e5, every 10th above.
    pub fn thin(&self) -> usize {
        self.thin.unwrap_or(if self.horizon <= 100_000 { 1 } else { 10 })
    }

    pub fn env_spec(&self) -> EnvSpec {
        let mut spec = match self.scenario {
            Scenario::DataPoor => EnvSpec::data_poor(),
            _ => EnvSpec::standard(),
        };
        let o = &self.env;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { spec.$f = v.clone(); } )* };
        }
        set!(instances, arms, dim, sparsity, arrival_probs, sigma, x_max, bias_range);
        if o.data_poor.is_some() {
            spec.data_poor = o.data_poor;
        }
        spec
    }

    pub fn bandit_config(&self, algorithm: Algorithm) -> BanditConfig {
        let spec = self.env_spec();
        let (n, k, d) = (spec.instances, spec.arms, spec.dim);
        let (mut cfg, o) = match (algorithm, self.scenario) {
            (Algorithm::Rmbandit, Scenario::DataPoor) => {
                let poor = spec.data_poor.map_or(0, |p| p.instance);
                (BanditConfig::rmbandit_data_poor(self.horizon, n, k, d, poor), &self.rmbandit)
            }
            (Algorithm::Rmbandit, _) => (BanditConfig::rmbandit_standard(self.horizon, n, k, d), &self.rmbandit),
            _ => (BanditConfig::baseline_standard(self.horizon, n, k, d), &self.baseline),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { cfg.$f = v.clone(); } )* };
        }
        set!(q, h, zeta0, eta0, zeta10, eta10, lambda0, lambda10, singular_policy);
        if o.exclude_data_poor.is_some() {
            cfg.exclude_data_poor = o.exclude_data_poor;
        }
        cfg
    }

    pub fn pricing_spec(&self) -> PricingSpec {
        let mut spec = PricingSpec::standard();
        let o = &self.pricing;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { spec.$f = v.clone(); } )* };
        }
        set!(instances, dim, sparsity, sigma, p_min, p_max, experimental_prices);
        spec
    }

    pub fn rmx_config(&self) -> RmxConfig {
        let o = &self.rmx;
        RmxConfig {
            horizon: self.horizon,
            zeta0: o.zeta0.unwrap_or(0.1),
            eta0: o.eta0.unwrap_or(0.1),
            lambda0: o.lambda0.clone().unwrap_or_else(|| vec![1e-5]),
            price_scale: o.price_scale.unwrap_or(1000.0),
            singular_policy: o.singular_policy.unwrap_or(SingularPolicy::MinNorm),
        }
    }

    pub fn static_section(&self) -> StaticSection {
        self.static_estimators.clone().unwrap_or_default()
    }

    /// Every semantic problem; empty means the config can run. `source` is
    /// the document text, used to attach line numbers.
    pub fn diagnostics(&self, source: &str) -> Vec<Diagnostic> {
        let mut out: Vec<(Option<&str>, String, String)> = Vec::new();
        let mut push = |section: Option<&'static str>, field: &str, message: String| {
            out.push((section, field.to_string(), message));
        };
        if self.seeds.is_empty() {
            push(None, "seeds", "at least one seed is required".into());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            push(None, "seeds", "seeds must be distinct".into());
        }
        if self.horizon < 1 && self.scenario != Scenario::StaticEstimators {
            push(None, "horizon", "must be at least 1".into());
        }
        if self.thin == Some(0) {
            push(None, "thin", "must be at least 1".into());
        }
        let algorithms = self.algorithms();
        for a in &algorithms {
            let ok = match self.scenario {
                Scenario::Pricing => a.is_pricing(),
                Scenario::StaticEstimators => false,
                _ => !a.is_pricing(),
            };
            if !ok {
                push(None, "algorithms", format!("{} is not available in this scenario", a.name()));
            }
        }
        match self.scenario {
            Scenario::Pricing => {
                let spec = self.pricing_spec();
                if spec.sparsity > spec.dim {
                    push(Some("pricing"), "sparsity", format!("s = {} exceeds dim = {}", spec.sparsity, spec.dim));
                } else if let Err(e) = PricingEnv::new(&spec, 0) {
                    push(Some("pricing"), "pricing", e.to_string());
                }
                for msg in self.rmx_config().diagnostics(spec.instances) {
                    push_split(&mut push, Some("rmx"), &msg);
                }
            }
            Scenario::StaticEstimators => {
                self.env_messages(&mut push);
                let s = self.static_section();
                if s.sample_sizes.is_empty() {
                    push(Some("static"), "sample_sizes", "at least one sample size is required".into());
                }
                if s.draws < 1 {
                    push(Some("static"), "draws", "must be at least 1".into());
                }
                if let Err(e) = TrimFraction::new(s.omega) {
                    push(Some("static"), "omega", e.to_string());
                }
                if !(s.lambda_scale >= 0.0) {
                    push(Some("static"), "lambda_scale", "must be nonnegative".into());
                }
            }
            _ => {
                self.env_messages(&mut push);
                for a in algorithms.iter().filter(|a| !a.is_pricing()) {
                    let section = if *a == Algorithm::Rmbandit { "rmbandit" } else { "baseline" };
                    for msg in self.bandit_config(*a).diagnostics() {
                        push_split(&mut push, Some(section), &msg);
                    }
                }
                if self.scenario == Scenario::Network && self.network.s_tilde.is_none() {
                    push(Some("network"), "s_tilde", "required for the network scenario".into());
                }
            }
        }
        let mut seen = BTreeSet::new();
        out.into_iter()
            .filter(|d| seen.insert(d.clone()))
            .map(|(section, field, message)| {
                // Overridden keys live in their section; preset values have no line.
                let key = field.split([' ', '.', '[']).next().unwrap_or(&field);
                let line = line_of_key(source, section, key).or_else(|| line_of_key(source, None, key));
                let field = match section {
                    Some(s) => format!("{s}.{field}"),
                    None => field,
                };
                Diagnostic { field, line, message }
            })
            .collect()
    }

    fn env_messages(&self, push: &mut impl FnMut(Option<&'static str>, &str, String)) {
        for msg in self.env_spec().diagnostics() {
            push_split(push, Some("env"), &msg);
        }
    }
}

/// Library diagnostics read `field: message`.
fn push_split(push: &mut impl FnMut(Option<&'static str>, &str, String), section: Option<&'static str>, msg: &str) {
    match msg.split_once(": ") {
        Some((field, rest)) => push(section, field, rest.to_string()),
        None => push(section, "config", msg.to_string()),
    }
}
