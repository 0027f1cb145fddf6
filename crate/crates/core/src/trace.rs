use serde::{Deserialize, Serialize};

/// One decision of a simulated policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based time step.
    pub t: usize,
    pub instance: usize,
    /// Chosen arm (0-based). Pricing runs store the forced experiment index
    /// here, 0 for a freely chosen price.
    pub arm: usize,
    pub regret: f64,
    pub cum_global: f64,
    pub cum_instance: f64,
}

/// Expected-regret trace of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub algorithm: String,
    pub seed: u64,
    pub config_hash: String,
    pub steps: Vec<TraceStep>,
    per_instance: Vec<f64>,
}

impl RegretTrace {
    pub fn new(algorithm: impl Into<String>, seed: u64, config_hash: impl Into<String>, instances: usize) -> Self {
        Self {
            algorithm: algorithm.into(),
            seed,
            config_hash: config_hash.into(),
            steps: Vec::new(),
            per_instance: vec![0.0; instances],
        }
    }

    pub fn with_capacity(mut self, horizon: usize) -> Self {
        self.steps.reserve(horizon);
        self
    }

    pub fn record(&mut self, instance: usize, arm: usize, regret: f64) {
        let t = self.steps.len() + 1;
        let cum_global = self.total() + regret;
        if instance >= self.per_instance.len() {
            self.per_instance.resize(instance + 1, 0.0);
        }
        self.per_instance[instance] += regret;
        self.steps.push(TraceStep {
            t,
            instance,
            arm,
            regret,
            cum_global,
            cum_instance: self.per_instance[instance],
        });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Cumulative regret over all instances.
    pub fn total(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_global)
    }

    /// Cumulative regret accrued at one instance.
    pub fn instance_total(&self, instance: usize) -> f64 {
        self.per_instance.get(instance).copied().unwrap_or(0.0)
    }

    pub fn arrivals_at(&self, instance: usize) -> usize {
        self.steps.iter().filter(|s| s.instance == instance).count()
    }

    /// Global cumulative regret after each step.
    pub fn cumulative(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cum_global).collect()
    }

    pub fn arms(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.arm).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_columns_resum() {
        let mut tr = RegretTrace::new("x", 1, "h", 2);
        tr.record(0, 1, 0.5);
        tr.record(1, 0, 0.25);
        tr.record(0, 0, 0.0);
        tr.record(0, 2, 1.0);
        let resum: f64 = tr.steps.iter().map(|s| s.regret).sum();
        assert_eq!(resum, tr.total());
        assert_eq!(tr.instance_total(0), 1.5);
        assert_eq!(tr.instance_total(1), 0.25);
        assert_eq!(tr.steps[3].t, 4);
        assert_eq!(tr.arrivals_at(0), 3);
    }
}
