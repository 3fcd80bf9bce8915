use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gram, labeled_moment, PartiallyLabeledDataset, Scope};
use crate::error::{Error, Result};
use crate::estimators::{build_problem, EstimatorVariant};
use crate::geometry;
use crate::linalg;
use crate::model::{DesignKind, ModelSpec, Nonlinearity, PopulationMoments};
use crate::solver::{self, PenalizedQuadraticProblem};
use crate::tuning::{self, BoundInputs, NoiseKind};

use super::bounds::{candidates, oracle_rhs, Candidate, RhsContext, RhsValue, Theorem};
use super::sampling::{sample_dataset, transductive_risk};
use super::{coverage_slack, splitmix64, trial_seed};

/// Trials solve well below the default tolerance so that the in-trial
/// fixed-point check measures the inequality rather than the stopping rule.
const TRIAL_TOL: f64 = 1e-11;
const FIXED_POINT_PROBES: usize = 10;
const FIXED_POINT_TOL: f64 = 1e-7;
const BUDGET_TOL: f64 = 1e-8;
const PROBE_STREAM: u64 = 0x7072_6f62_6573;

/// What a configuration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Transductive lasso against its transductive-risk bound.
    T1,
    /// Well-specified semi-supervised lasso against both of its bounds.
    T2,
    /// Semi-supervised lasso without linearity, fixed support and
    /// `‖Σ⁻¹‖` forms.
    T3,
    /// Mean excess risk against the expectation bound.
    T4,
    /// Coverage of the concentration levels used by the tuning formulas.
    Concentration,
    /// Paired semi-supervised versus supervised fits on shared data.
    Compare,
}

impl Experiment {
    fn primary(self) -> Option<Theorem> {
        match self {
            Experiment::T1 => Some(Theorem::T1),
            Experiment::T2 => Some(Theorem::T2a),
            Experiment::T3 => Some(Theorem::T3),
            Experiment::T4 => Some(Theorem::T4),
            Experiment::Concentration | Experiment::Compare => None,
        }
    }

    fn secondary(self) -> Option<Theorem> {
        match self {
            Experiment::T2 => Some(Theorem::T2b),
            Experiment::T3 => Some(Theorem::Cor1),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::T1 => "t1",
            Experiment::T2 => "t2",
            Experiment::T3 => "t3",
            Experiment::T4 => "t4",
            Experiment::Concentration => "concentration",
            Experiment::Compare => "compare",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    #[default]
    None,
    BoundedInteraction,
    BoundedSine,
}

fn default_s_star() -> usize {
    3
}
fn default_one() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    2.0
}
fn default_trials() -> usize {
    200
}

/// A Monte Carlo experiment, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub theorem: Experiment,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub n_total: usize,
    #[serde(default = "default_s_star")]
    pub s_star: usize,
    #[serde(default = "default_one")]
    pub beta_magnitude: f64,
    #[serde(default)]
    pub design: DesignKind,
    #[serde(default)]
    pub nonlinearity: NonlinearityKind,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_noise")]
    pub noise_halfwidth: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_one")]
    pub lambda_slack: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.n == 0 || self.n > self.n_total {
            return bad(format!(
                "need 1 ≤ n ≤ N, got n = {}, N = {}",
                self.n, self.n_total
            ));
        }
        if self.s_star == 0 || self.s_star > self.p {
            return bad(format!(
                "s_star must lie in 1..={}, got {}",
                self.p, self.s_star
            ));
        }
        if !(self.beta_magnitude.is_finite() && self.beta_magnitude != 0.0) {
            return bad("beta_magnitude must be finite and nonzero".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.lambda_slack > 0.0 && self.lambda_slack.is_finite()) {
            return bad("lambda_slack must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.noise_halfwidth >= 0.0 && self.noise_halfwidth.is_finite()) {
            return bad("noise_halfwidth must be finite and nonnegative".into());
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        if self.nonlinearity == NonlinearityKind::None && self.alpha != 0.0 {
            return bad("alpha is set but nonlinearity is none".into());
        }
        if let Some(v) = &self.variant {
            v.parse::<EstimatorVariant>()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        match self.nonlinearity {
            NonlinearityKind::None => Nonlinearity::None,
            NonlinearityKind::BoundedInteraction => {
                Nonlinearity::BoundedInteraction { alpha: self.alpha }
            }
            NonlinearityKind::BoundedSine => Nonlinearity::BoundedSine { alpha: self.alpha },
        }
    }

    pub fn model(&self) -> Result<ModelSpec> {
        ModelSpec::sparse(
            self.design.build(self.p)?,
            self.s_star,
            self.beta_magnitude,
            self.nonlinearity(),
            self.noise_halfwidth,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Must hold with probability at least `1 − δ`.
    Probabilistic,
    /// Must hold on every trial.
    Deterministic,
}

/// One inequality evaluated inside a trial. `holds` records whether the
/// inequality named by `name` is satisfied by `value` against `bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl Check {
    fn at_most(name: &str, kind: CheckKind, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            kind,
            value,
            bound,
            holds: value <= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_index: u64,
    pub seed: u64,
    pub variant: String,
    pub lambda: f64,
    pub excess_risk: f64,
    pub transductive_risk: Option<f64>,
    pub rhs_bound: Option<f64>,
    pub covered: Option<bool>,
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub l1_norm: f64,
    pub candidate_used: Option<Candidate>,
    pub cone_constant_used: Option<f64>,
    pub baseline_excess_risk: Option<f64>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub kind: CheckKind,
    pub trials: usize,
    pub holds: usize,
    pub coverage: f64,
    pub required: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationSummary {
    pub rhs: f64,
    /// `B_Y⁴/(2n²λ²)`, the tail term at `δ = N⁻²` before simplification.
    pub proof_side_term: f64,
    pub mean_excess_risk: f64,
    pub std_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub variant: String,
    pub baseline_variant: String,
    pub median_excess_risk: f64,
    pub median_baseline_excess_risk: f64,
    pub wins: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: ExperimentConfig,
    pub theorem: Option<Theorem>,
    pub variant: String,
    pub lambda: f64,
    pub trials: usize,
    pub delta: f64,
    pub slack: f64,
    pub covered_trials: Option<usize>,
    pub coverage: Option<f64>,
    pub pass: bool,
    pub mean_excess_risk: f64,
    pub excess_risk_std_error: f64,
    /// Trials whose fit is identically zero.
    pub zero_fits: usize,
    pub mean_transductive_risk: Option<f64>,
    pub checks: Vec<CheckSummary>,
    /// Bounds left out because a precondition fails, with the reason.
    pub skipped: Vec<String>,
    pub expectation: Option<ExpectationSummary>,
    pub comparison: Option<ComparisonSummary>,
    pub seeds: Vec<u64>,
}

impl CoverageReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub report: CoverageReport,
    pub trials: Vec<TrialReport>,
}

impl MonteCarloRun {
    pub const CSV_COLUMNS: [&'static str; 15] = [
        "trial_index",
        "seed",
        "variant",
        "lambda",
        "excess_risk",
        "transductive_risk",
        "rhs_bound",
        "covered",
        "kkt_residual",
        "sweeps",
        "l1_norm",
        "candidate_used",
        "cone_constant_used",
        "baseline_excess_risk",
        "checks_failed",
    ];

    /// One row per trial in [`Self::CSV_COLUMNS`] order.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(Self::CSV_COLUMNS).map_err(csv_err)?;
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        for t in &self.trials {
            let failed: Vec<&str> = t
                .checks
                .iter()
                .filter(|c| !c.holds)
                .map(|c| c.name.as_str())
                .collect();
            w.write_record([
                t.trial_index.to_string(),
                t.seed.to_string(),
                t.variant.clone(),
                t.lambda.to_string(),
                t.excess_risk.to_string(),
                opt(t.transductive_risk),
                opt(t.rhs_bound),
                t.covered.map_or_else(String::new, |c| c.to_string()),
                t.kkt_residual.to_string(),
                t.sweeps.to_string(),
                t.l1_norm.to_string(),
                t.candidate_used
                    .as_ref()
                    .map_or_else(String::new, |c| c.label.clone()),
                opt(t.cone_constant_used),
                opt(t.baseline_excess_risk),
                failed.join(";"),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Everything about a configuration that does not depend on the trial.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    config: ExperimentConfig,
    model: ModelSpec,
    moments: PopulationMoments,
    variant: EstimatorVariant,
    baseline: Option<EstimatorVariant>,
    inputs: BoundInputs,
    lambda: f64,
    candidates: Vec<Candidate>,
    secondary: Option<(Theorem, RhsValue)>,
    primary_fixed: Option<RhsValue>,
    skipped: Vec<String>,
    l1_budget: Option<f64>,
    noise_levels: Vec<(NoiseKind, f64)>,
    concentration: Option<ConcentrationLevels>,
}

#[derive(Debug, Clone)]
struct ConcentrationLevels {
    beta_ls: DVector<f64>,
    sigma_inv_sqrt: DMatrix<f64>,
    zeta2: f64,
    lambda_min: f64,
    sup_norm: f64,
}

impl PreparedExperiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        let moments = model.moments();
        let experiment = config.theorem;
        let inputs = BoundInputs::new(
            model.feature_bound(),
            model.label_bound(),
            config.n,
            config.n_total,
            config.p,
            config.delta,
        )?
        .with_sigma_inv_norm(model.design().sigma_inv_norm())
        .with_gamma(config.gamma);

        let base_lambda = match experiment.primary() {
            Some(t) => t.lambda(&inputs)?,
            None if model.is_well_specified() => tuning::lambda_semisup_wellspec(&inputs)?,
            None => tuning::lambda_semisup_misspec(&inputs)?,
        };
        let lambda = base_lambda * config.lambda_slack;
        if experiment.primary().is_some() && config.lambda_slack < 1.0 {
            return Err(Error::Config(format!(
                "lambda_slack = {} is below 1, so the {} bound does not apply",
                config.lambda_slack, experiment
            )));
        }

        let variant = match &config.variant {
            Some(v) => v.parse()?,
            None if experiment == Experiment::T1 => EstimatorVariant::Transductive,
            None => EstimatorVariant::SemiSupervised,
        };
        let baseline = (experiment == Experiment::Compare).then_some(EstimatorVariant::Supervised);
        if variant.needs_unlabeled() && config.n_total == config.n {
            return Err(Error::Config(format!(
                "variant {variant} needs unlabeled rows"
            )));
        }

        let semi = experiment != Experiment::T1;
        let l1_budget = (variant == EstimatorVariant::SemiSupervised)
            .then(|| tuning::l1_budget(inputs.by, config.n, config.n_total, lambda));
        let candidates = candidates(&model, &moments, if semi { l1_budget } else { None })?;

        let ctx = RhsContext {
            model: &model,
            moments: &moments,
            dataset: None,
            n: config.n,
            n_total: config.n_total,
            lambda,
            delta: config.delta,
            gamma: config.gamma,
            candidates: &candidates,
        };
        let mut skipped = Vec::new();
        let secondary = match experiment.secondary() {
            Some(t) => match oracle_rhs(t, &ctx) {
                Ok(v) => Some((t, v)),
                Err(Error::Precondition(msg)) if t == Theorem::T2b => {
                    skipped.push(format!("{t}: {msg}"));
                    None
                }
                Err(e) => return Err(e),
            },
            None => None,
        };
        let primary_fixed = if experiment == Experiment::T4 {
            Some(oracle_rhs(Theorem::T4, &ctx)?)
        } else {
            None
        };
        // Per-trial bounds: check the data-free preconditions up front.
        match experiment {
            Experiment::T1 if config.n_total == config.n => {
                return Err(Error::Precondition("T1 needs unlabeled rows".into()));
            }
            Experiment::T2 if !model.is_well_specified() => {
                return Err(Error::Precondition(
                    "T2_a needs a linear regression function".into(),
                ));
            }
            Experiment::T3 => {
                let need = tuning::min_overall_sample(
                    config.p,
                    inputs.bx,
                    inputs.sigma_inv_norm,
                    config.delta,
                )?;
                if (config.n_total as u64) < need {
                    return Err(Error::Precondition(format!(
                        "T3 needs N ≥ {need}, got N = {}",
                        config.n_total
                    )));
                }
            }
            _ => {}
        }

        let mut noise_levels = vec![
            (
                NoiseKind::Zeta1,
                tuning::noise_quantile(NoiseKind::Zeta1, &inputs)?,
            ),
            (
                NoiseKind::ZetaBar,
                tuning::noise_quantile(NoiseKind::ZetaBar, &inputs)?,
            ),
        ];
        if inputs.m > 0 {
            noise_levels.insert(
                1,
                (
                    NoiseKind::Zeta,
                    tuning::noise_quantile(NoiseKind::Zeta, &inputs)?,
                ),
            );
        }

        let concentration = if experiment == Experiment::Concentration {
            let all: Vec<usize> = (0..config.p).collect();
            let sigma = &moments.sigma;
            Some(ConcentrationLevels {
                beta_ls: moments.refit(&all)?,
                sigma_inv_sqrt: linalg::spectral_map(sigma, 1e-12, |ev| 1.0 / ev.sqrt()),
                zeta2: tuning::zeta2_quantile(&inputs)?,
                lambda_min: geometry::lambda_min_threshold(
                    config.p,
                    config.n_total,
                    inputs.bx,
                    inputs.sigma_inv_norm,
                    config.delta,
                )?,
                sup_norm: geometry::sup_norm_deviation_threshold(
                    config.p,
                    config.n_total,
                    inputs.bx,
                    config.delta,
                )?,
            })
        } else {
            None
        };

        Ok(PreparedExperiment {
            config,
            model,
            moments,
            variant,
            baseline,
            inputs,
            lambda,
            candidates,
            secondary,
            primary_fixed,
            skipped,
            l1_budget,
            noise_levels,
            concentration,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn moments(&self) -> &PopulationMoments {
        &self.moments
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn bound_inputs(&self) -> &BoundInputs {
        &self.inputs
    }

    fn fit(
        &self,
        d: &PartiallyLabeledDataset,
        v: &EstimatorVariant,
        index: u64,
        seed: u64,
    ) -> Result<(PenalizedQuadraticProblem, solver::Solution)> {
        let invalid = |reason: String| Error::InvalidTrial {
            trial_index: index,
            seed,
            reason,
        };
        let problem = build_problem(d, v, self.lambda)?;
        let sol = solver::solve(&problem, TRIAL_TOL, solver::DEFAULT_MAX_SWEEPS)
            .map_err(|e| invalid(format!("{v}: {e}")))?;
        if !sol.converged {
            return Err(invalid(format!(
                "{v}: solver stopped after {} sweeps with KKT residual {:.3e}",
                sol.sweeps, sol.kkt_residual
            )));
        }
        Ok((problem, sol))
    }

    /// Runs trial `index` with the seed derived from the configured master
    /// seed.
    pub fn run_trial(&self, index: u64) -> Result<TrialReport> {
        self.run_trial_seeded(index, trial_seed(self.config.master_seed, index))
    }

    fn run_trial_seeded(&self, index: u64, seed: u64) -> Result<TrialReport> {
        let cfg = &self.config;
        let d = sample_dataset(&self.model, cfg.n, cfg.n_total, seed)?;
        let (problem, sol) = self.fit(&d, &self.variant, index, seed)?;
        let beta_hat = sol.beta();
        let excess = self.moments.excess_risk(&beta_hat);
        let unlab = d.unlabeled_features();
        let trans = if d.m() > 0 {
            Some(transductive_risk(&beta_hat, &self.model, &unlab)?)
        } else {
            None
        };

        let ctx = RhsContext {
            model: &self.model,
            moments: &self.moments,
            dataset: Some(&d),
            n: cfg.n,
            n_total: cfg.n_total,
            lambda: self.lambda,
            delta: cfg.delta,
            gamma: cfg.gamma,
            candidates: &self.candidates,
        };
        let primary = match cfg.theorem.primary() {
            Some(Theorem::T4) => self.primary_fixed.clone(),
            Some(t) => Some(oracle_rhs(t, &ctx)?),
            None => None,
        };
        let risk_for_bound = if cfg.theorem == Experiment::T1 {
            trans.expect("T1 has unlabeled rows")
        } else {
            excess
        };
        let covered = primary.as_ref().map(|r| risk_for_bound <= r.value);

        let mut checks = Vec::new();
        if let Some((t, rhs)) = &self.secondary {
            checks.push(Check::at_most(
                t.name(),
                CheckKind::Probabilistic,
                excess,
                rhs.value,
            ));
        }
        checks.push(self.fixed_point_check(&problem, &beta_hat, seed));
        if let Some(budget) = self.l1_budget {
            checks.push(Check::at_most(
                "l1_budget",
                CheckKind::Deterministic,
                linalg::l1_norm(&beta_hat),
                budget + BUDGET_TOL,
            ));
        }
        self.noise_checks(&d, &mut checks);
        if let Some(levels) = &self.concentration {
            self.concentration_checks(&d, levels, &mut checks)?;
        }

        let baseline_excess_risk = match &self.baseline {
            Some(v) => {
                let (_, base) = self.fit(&d, v, index, seed)?;
                Some(self.moments.excess_risk(&base.beta()))
            }
            None => None,
        };

        Ok(TrialReport {
            trial_index: index,
            seed,
            variant: self.variant.name().into(),
            lambda: self.lambda,
            excess_risk: excess,
            transductive_risk: trans,
            rhs_bound: primary.as_ref().map(|r| r.value),
            covered,
            kkt_residual: sol.kkt_residual,
            sweeps: sol.sweeps,
            l1_norm: linalg::l1_norm(&beta_hat),
            candidate_used: primary.as_ref().map(|r| r.candidate.clone()),
            cone_constant_used: primary.as_ref().and_then(|r| r.cone_constant),
            baseline_excess_risk,
            checks,
        })
    }

    fn fixed_point_check(
        &self,
        problem: &PenalizedQuadraticProblem,
        beta_hat: &DVector<f64>,
        seed: u64,
    ) -> Check {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ PROBE_STREAM));
        let p = beta_hat.len();
        let scale = 1.0 + linalg::sup_norm(beta_hat);
        let mut worst = f64::INFINITY;
        for k in 0..FIXED_POINT_PROBES {
            let u = DVector::from_fn(p, |_, _| scale * rng.random_range(-1.0..1.0));
            let probe = if k % 2 == 0 { beta_hat + u } else { u };
            worst = worst.min(solver::fixed_point_gap(problem, beta_hat, &probe));
        }
        Check {
            name: "fixed_point_gap".into(),
            kind: CheckKind::Deterministic,
            value: worst,
            bound: -FIXED_POINT_TOL,
            holds: worst >= -FIXED_POINT_TOL,
        }
    }

    fn noise_checks(&self, d: &PartiallyLabeledDataset, checks: &mut Vec<Check>) {
        let b = labeled_moment(d);
        let x = d.features();
        let p = d.p();
        let mut f_all = DVector::zeros(d.n_total());
        let mut row = vec![0.0; p];
        for i in 0..d.n_total() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            f_all[i] = self.model.f_star(&row);
        }
        let weighted_mean = |start: usize, count: usize| -> DVector<f64> {
            let rows = x.rows(start, count);
            rows.transpose() * f_all.rows(start, count) / count as f64
        };
        for &(kind, level) in &self.noise_levels {
            let (name, value) = match kind {
                NoiseKind::Zeta1 => ("zeta1", linalg::sup_norm(&(&b - &self.moments.mu))),
                NoiseKind::Zeta => (
                    "zeta",
                    linalg::sup_norm(&(&b - weighted_mean(d.n(), d.m()))),
                ),
                NoiseKind::ZetaBar => (
                    "zeta_bar",
                    linalg::sup_norm(&(&b - weighted_mean(0, d.n_total()))),
                ),
            };
            checks.push(Check::at_most(name, CheckKind::Probabilistic, value, level));
        }
    }

    fn concentration_checks(
        &self,
        d: &PartiallyLabeledDataset,
        levels: &ConcentrationLevels,
        checks: &mut Vec<Check>,
    ) -> Result<()> {
        let g = gram(d, Scope::All)?;
        let sigma = &self.moments.sigma;
        let zeta2 = g.matrix() * &levels.beta_ls - sigma * &levels.beta_ls;
        checks.push(Check::at_most(
            "zeta2",
            CheckKind::Probabilistic,
            linalg::sup_norm(&zeta2),
            levels.zeta2,
        ));
        let whitened = &levels.sigma_inv_sqrt * g.matrix() * &levels.sigma_inv_sqrt;
        let lmin = linalg::lambda_min(&((&whitened + whitened.transpose()) * 0.5));
        checks.push(Check {
            name: "lambda_min".into(),
            kind: CheckKind::Probabilistic,
            value: lmin,
            bound: levels.lambda_min,
            holds: lmin >= levels.lambda_min,
        });
        let dev = linalg::sup_norm_matrix(&(g.matrix() - sigma));
        checks.push(Check::at_most(
            "sup_norm",
            CheckKind::Probabilistic,
            dev,
            levels.sup_norm,
        ));
        // Hoeffding with the full range 2B_X² of X_jX_k doubles the level.
        checks.push(Check::at_most(
            "sup_norm_full_range",
            CheckKind::Probabilistic,
            dev,
            2.0 * levels.sup_norm,
        ));
        Ok(())
    }

    fn aggregate(&self, trials: Vec<TrialReport>) -> MonteCarloRun {
        let cfg = &self.config;
        let t = trials.len();
        let delta = cfg.delta;
        let slack = coverage_slack(delta, t);
        let required = 1.0 - delta - slack;
        let tf = t as f64;

        let risks: Vec<f64> = trials.iter().map(|r| r.excess_risk).collect();
        let mean = risks.iter().sum::<f64>() / tf;
        let var = if t > 1 {
            risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (tf - 1.0)
        } else {
            0.0
        };
        let std_error = (var / tf).sqrt();
        let mean_trans = trials
            .iter()
            .map(|r| r.transductive_risk)
            .sum::<Option<f64>>()
            .map(|s| s / tf);

        let covered_trials = cfg
            .theorem
            .primary()
            .map(|_| trials.iter().filter(|r| r.covered == Some(true)).count());
        let coverage = covered_trials.map(|c| c as f64 / tf);

        let mut checks: Vec<CheckSummary> = Vec::new();
        for trial in &trials {
            for c in &trial.checks {
                let idx = match checks.iter().position(|s| s.name == c.name) {
                    Some(i) => i,
                    None => {
                        checks.push(CheckSummary {
                            name: c.name.clone(),
                            kind: c.kind,
                            trials: 0,
                            holds: 0,
                            coverage: 0.0,
                            required: match c.kind {
                                CheckKind::Probabilistic => required,
                                CheckKind::Deterministic => 1.0,
                            },
                            pass: false,
                        });
                        checks.len() - 1
                    }
                };
                let s = &mut checks[idx];
                s.trials += 1;
                s.holds += usize::from(c.holds);
            }
        }
        for s in checks.iter_mut() {
            s.coverage = s.holds as f64 / s.trials as f64;
            s.pass = match s.kind {
                CheckKind::Probabilistic => s.coverage >= s.required,
                CheckKind::Deterministic => s.holds == s.trials,
            };
        }

        let expectation = self.primary_fixed.as_ref().map(|rhs| {
            let by = self.inputs.by;
            let proof_side_term =
                by.powi(4) / (2.0 * (cfg.n as f64).powi(2) * self.lambda * self.lambda);
            ExpectationSummary {
                rhs: rhs.value,
                proof_side_term,
                mean_excess_risk: mean,
                std_error,
                pass: mean <= rhs.value + 3.0 * std_error,
            }
        });

        let comparison = self.baseline.as_ref().map(|base| {
            let baseline: Vec<f64> = trials
                .iter()
                .map(|r| {
                    r.baseline_excess_risk
                        .expect("compare trials fit a baseline")
                })
                .collect();
            let wins = risks.iter().zip(&baseline).filter(|(a, b)| a <= b).count();
            let med = median(&risks);
            let med_base = median(&baseline);
            ComparisonSummary {
                variant: self.variant.name().into(),
                baseline_variant: base.name().into(),
                median_excess_risk: med,
                median_baseline_excess_risk: med_base,
                wins,
                pass: med <= med_base,
            }
        });

        let primary_pass = match cfg.theorem {
            Experiment::T4 => expectation.as_ref().is_some_and(|e| e.pass),
            Experiment::Compare => comparison.as_ref().is_some_and(|c| c.pass),
            _ => coverage.is_none_or(|c| c >= required),
        };
        let pass = primary_pass && checks.iter().all(|c| c.pass);

        let report = CoverageReport {
            config: cfg.clone(),
            theorem: cfg.theorem.primary(),
            variant: self.variant.name().into(),
            lambda: self.lambda,
            trials: t,
            delta,
            slack,
            covered_trials,
            coverage,
            pass,
            mean_excess_risk: mean,
            excess_risk_std_error: std_error,
            zero_fits: trials.iter().filter(|r| r.l1_norm == 0.0).count(),
            mean_transductive_risk: mean_trans,
            checks,
            skipped: self.skipped.clone(),
            expectation,
            comparison,
            seeds: trials.iter().map(|r| r.seed).collect(),
        };
        MonteCarloRun { report, trials }
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Runs one trial of `config` from scratch.
pub fn run_trial(config: &ExperimentConfig, trial_index: u64) -> Result<TrialReport> {
    PreparedExperiment::new(config.clone())?.run_trial(trial_index)
}

/// Runs `trials` trials under `master_seed`, overriding the values in
/// `config`, on at most `jobs` threads.
///
/// The report is identical for every `jobs`. If a trial is invalid, the
/// error for the lowest such index is returned.
pub fn run_monte_carlo(
    config: &ExperimentConfig,
    trials: usize,
    master_seed: u64,
    jobs: Option<usize>,
) -> Result<MonteCarloRun> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut config = config.clone();
    config.trials = trials;
    config.master_seed = master_seed;
    let prepared = PreparedExperiment::new(config)?;
    let work = || -> Vec<Result<TrialReport>> {
        (0..trials as u64)
            .into_par_iter()
            .map(|i| prepared.run_trial(i))
            .collect()
    };
    let results = match jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {k} worker threads: {e}")))?
            .install(work),
        None => work(),
    };
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(prepared.aggregate(reports))
}
