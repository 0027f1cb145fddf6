//! Batched multitask contextual bandits.
//!
//! Time is split into a forced-sampling window followed by doubling batches.
//! Forced-sample estimates fitted on the first window filter out clearly
//! inferior arms; all-sample estimates, refitted at the end of every batch on
//! that batch's data only, pick among the survivors.

pub mod config;
pub mod engine;
pub mod policy;
pub mod schedule;
pub mod theory;

pub use config::{BanditConfig, HyperPathState, MAX_TRIM_FRACTION};
pub use engine::{
    run_baseline_bandit, run_engine, run_rmbandit, ArmEstimates, BanditEngine, BaselineKind,
    EstimatorKind, RefitFailure,
};
pub use policy::{choose_arm, filter_arms, forced_arm};
pub use schedule::{build_schedule, BatchSchedule};
pub use theory::{theoretical_hyperparams, theoretical_hyperparams_data_poor, ProblemConstants, TheoryHyper};
