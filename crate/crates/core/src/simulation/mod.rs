//! Synthetic data, exact risks, theorem right-hand sides and seeded Monte
//! Carlo coverage experiments.
//!
//! Every random quantity is a pure function of a `u64` seed. Trial `i` of a
//! run with master seed `s` uses [`trial_seed`]`(s, i)`, so results do not
//! depend on how trials are scheduled across threads.

mod bounds;
mod experiment;
mod sampling;

pub use bounds::{candidates, oracle_rhs, Candidate, RhsContext, RhsValue, Theorem};
pub use experiment::{
    run_monte_carlo, run_trial, Check, CheckKind, CheckSummary, ComparisonSummary, CoverageReport,
    ExpectationSummary, Experiment, ExperimentConfig, MonteCarloRun, NonlinearityKind,
    PreparedExperiment, TrialReport,
};
pub use sampling::{
    excess_risk, population_covariance, sample_dataset, transductive_risk, RiskEstimate,
};

/// One SplitMix64 output for `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Two-sided 99% normal half-width for a binomial proportion at `1 − δ`.
pub fn coverage_slack(delta: f64, trials: usize) -> f64 {
    2.5758 * (delta * (1.0 - delta) / trials as f64).sqrt()
}
