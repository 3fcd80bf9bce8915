use std::path::Path;

use pllasso::data::{gram, load_dataset, Bounds, GramMatrix, PartiallyLabeledDataset, Scope};
use pllasso::estimators::{build_problem, EstimatorVariant};
use pllasso::geometry::{self, Certification, ConeConstantReport, ConeKind};
use pllasso::simulation::{run_monte_carlo, ExperimentConfig, MonteCarloRun, Theorem};
use pllasso::solver;
use pllasso::tuning::BoundInputs;
use serde::Serialize;

use crate::output::{self, check_input_path, check_output_path, emit, format_sig, to_json};
use crate::{
    ConstantKind, ConstantsArgs, Failure, FitArgs, LambdaArgs, RunArgs, SimulateArgs, VerifyArgs,
};

#[derive(Debug, Serialize)]
struct LambdaRule {
    theorem: String,
    formula: &'static str,
    inputs: BoundInputs,
    bounds_inferred: bool,
}

#[derive(Debug, Serialize)]
struct FitReport {
    variant: String,
    lambda: f64,
    lambda_rule: Option<LambdaRule>,
    p: usize,
    n: usize,
    #[serde(rename = "N")]
    n_total: usize,
    beta_hat: Vec<f64>,
    /// 1-based.
    support: Vec<usize>,
    l1_norm: f64,
    objective: f64,
    kkt_residual: f64,
    sweeps: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct ConstantOut {
    kind: ConeKind,
    value: f64,
    /// 1-based.
    support: Vec<usize>,
    c: f64,
    certification: Certification,
    witness: Vec<f64>,
}

impl From<ConeConstantReport> for ConstantOut {
    fn from(r: ConeConstantReport) -> Self {
        ConstantOut {
            kind: r.kind,
            value: r.value,
            support: r.support.iter().map(|j| j + 1).collect(),
            c: r.c,
            certification: r.certification,
            witness: r.witness,
        }
    }
}

#[derive(Debug, Serialize)]
struct LambdaExplanation {
    theorem: String,
    lambda: f64,
    formula: &'static str,
    inputs: BoundInputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_star: Option<usize>,
}

fn formula(theorem: Theorem) -> &'static str {
    match theorem {
        Theorem::T1 => "gamma * (2 B_Y r + (2/3) B_X B_Y r^2), r = sqrt(log(2p/delta) / n*), n* = min(n, N - n)",
        Theorem::T2a | Theorem::T2b => "4 B_Y r (1 + B_X r / 2), r = sqrt(log(4p/delta) / n)",
        Theorem::T3 | Theorem::Cor1 => "8 B_X B_Y r (1 + B_X r / 3), r = sqrt(log(6p/delta) / n)",
        Theorem::T4 => "8 B_X B_Y r (1 + B_X r / 3), r = sqrt(log(6p N^2) / n)",
    }
}

fn check_level(flag: &'static str, delta: f64) -> Result<(), Failure> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Failure::usage(
            flag,
            format!("must lie in (0, 1), got {delta}"),
        ));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<(), Failure> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Failure::usage(
            "--gamma",
            format!("must exceed 1, got {gamma}"),
        ));
    }
    Ok(())
}

fn check_bound(flag: &'static str, v: Option<f64>) -> Result<(), Failure> {
    match v {
        Some(b) if !(b >= 0.0 && b.is_finite()) => Err(Failure::usage(
            flag,
            format!("must be finite and nonnegative, got {b}"),
        )),
        _ => Ok(()),
    }
}

fn load(flag: &'static str, path: &Path) -> Result<PartiallyLabeledDataset, Failure> {
    load_dataset(path).map_err(|e| Failure::usage(flag, e))
}

pub fn fit(a: &FitArgs) -> Result<u8, Failure> {
    check_input_path("--dataset", &a.dataset)?;
    if let Some(s) = &a.sigma {
        check_input_path("--sigma", s)?;
    }
    if let Some(o) = &a.output {
        check_output_path("--output", o)?;
    }
    let requested = if a.lambda == "auto" {
        None
    } else {
        match a.lambda.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Some(v),
            _ => {
                return Err(Failure::usage(
                    "--lambda",
                    format!(
                        "expected a nonnegative number or `auto`, got {:?}",
                        a.lambda
                    ),
                ))
            }
        }
    };
    check_level("--delta", a.delta)?;
    check_gamma(a.gamma)?;
    check_bound("--bx", a.bx)?;
    check_bound("--by", a.by)?;
    if !(a.tol > 0.0) {
        return Err(Failure::usage("--tol", "must be positive"));
    }

    let variant = if a.variant == "known_sigma" {
        let path = a
            .sigma
            .as_ref()
            .ok_or_else(|| Failure::usage("--sigma", "required by --variant known_sigma"))?;
        let m = output::read_matrix("--sigma", path)?;
        EstimatorVariant::KnownSigma(
            GramMatrix::new(m, Scope::Population).map_err(|e| Failure::usage("--sigma", e))?,
        )
    } else {
        if a.sigma.is_some() {
            return Err(Failure::usage(
                "--sigma",
                "only used by --variant known_sigma",
            ));
        }
        a.variant
            .parse::<EstimatorVariant>()
            .map_err(|e| Failure::usage("--variant", e))?
    };

    let data = load("--dataset", &a.dataset)?;
    let empirical = data
        .clone()
        .with_inferred_bounds()
        .bounds()
        .expect("inferred bounds");
    let bounds = Bounds {
        bx: a.bx.unwrap_or(empirical.bx),
        by: a.by.unwrap_or(empirical.by),
        inferred: a.bx.is_none() || a.by.is_none(),
    };
    let data = data
        .with_bounds(Some(bounds))
        .map_err(|e| Failure::usage("--bx/--by", e))?;

    let (lambda, rule) = match requested {
        Some(v) => (v, None),
        None => {
            let theorem = match (&variant, a.well_specified) {
                (EstimatorVariant::Transductive, _) => Theorem::T1,
                (EstimatorVariant::SemiSupervised, true) => Theorem::T2a,
                (EstimatorVariant::SemiSupervised, false) => Theorem::T3,
                (other, _) => {
                    return Err(Failure::usage(
                        "--lambda",
                        format!("auto is defined for transductive and semisupervised, not {other}"),
                    ))
                }
            };
            let inputs = BoundInputs::new(
                bounds.bx,
                bounds.by,
                data.n(),
                data.n_total(),
                data.p(),
                a.delta,
            )
            .map(|i| i.with_gamma(a.gamma))
            .map_err(|e| Failure::usage("--lambda", e))?;
            let lambda = theorem
                .lambda(&inputs)
                .map_err(|e| Failure::usage("--lambda", e))?;
            if a.explain {
                eprintln!(
                    "lambda auto: {} -> {} = {}",
                    variant,
                    theorem.name(),
                    format_sig(lambda)
                );
                eprintln!("  {}", formula(theorem));
                eprintln!(
                    "  B_X = {}, B_Y = {} ({}), n = {}, N = {}, p = {}, delta = {}, gamma = {}",
                    format_sig(bounds.bx),
                    format_sig(bounds.by),
                    if bounds.inferred { "inferred" } else { "given" },
                    inputs.n,
                    inputs.n_total,
                    inputs.p,
                    inputs.delta,
                    inputs.gamma
                );
            }
            let rule = LambdaRule {
                theorem: theorem.name().to_string(),
                formula: formula(theorem),
                inputs,
                bounds_inferred: bounds.inferred,
            };
            (lambda, Some(rule))
        }
    };

    let problem =
        build_problem(&data, &variant, lambda).map_err(|e| Failure::usage("--variant", e))?;
    let sol = solver::solve(&problem, a.tol, a.max_sweeps)
        .map_err(|e| Failure::internal(e.to_string()))?;
    if !sol.converged {
        return Err(Failure::usage(
            "--max-sweeps",
            format!(
                "solver stopped after {} sweeps with KKT residual {:e} above --tol {:e}",
                sol.sweeps, sol.kkt_residual, a.tol
            ),
        ));
    }
    eprintln!(
        "fit {} with lambda {}: {} sweeps, KKT residual {:e}",
        variant,
        format_sig(lambda),
        sol.sweeps,
        sol.kkt_residual
    );
    let report = FitReport {
        variant: variant.name().to_string(),
        lambda,
        lambda_rule: rule,
        p: data.p(),
        n: data.n(),
        n_total: data.n_total(),
        support: sol
            .beta_hat
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j + 1)
            .collect(),
        l1_norm: sol.beta_hat.iter().map(|b| b.abs()).sum(),
        beta_hat: sol.beta_hat,
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        sweeps: sol.sweeps,
        converged: sol.converged,
    };
    emit(&to_json(&report)?, a.output.as_deref())?;
    Ok(0)
}

pub fn constants(a: &ConstantsArgs) -> Result<u8, Failure> {
    if let Some(m) = &a.matrix {
        check_input_path("--matrix", m)?;
    }
    if let Some(d) = &a.dataset {
        check_input_path("--dataset", d)?;
    }
    if let Some(o) = &a.output {
        check_output_path("--output", o)?;
    }
    if !(a.c > 0.0 && a.c.is_finite()) {
        return Err(Failure::usage(
            "--c",
            format!("must be positive, got {}", a.c),
        ));
    }
    let m = match (&a.matrix, &a.dataset) {
        (Some(path), _) => output::read_matrix("--matrix", path)?,
        (None, Some(path)) => {
            let scope: Scope = a.scope.parse().map_err(|e| Failure::usage("--scope", e))?;
            let data = load("--dataset", path)?;
            gram(&data, scope)
                .map_err(|e| Failure::usage("--scope", e))?
                .into_matrix()
        }
        (None, None) => {
            return Err(Failure::usage(
                "--matrix",
                "either --matrix or --dataset is required",
            ))
        }
    };
    let p = m.nrows();

    let reports: Vec<ConstantOut> = if let Some(s) = a.sparsity {
        if !matches!(
            a.kind,
            ConstantKind::RestrictedEigenvalue | ConstantKind::All
        ) {
            return Err(Failure::usage("--sparsity", "only applies to --kind re"));
        }
        let r = geometry::restricted_eigenvalue_over_supports(&m, s, a.c)
            .map_err(|e| Failure::usage("--sparsity", e))?;
        vec![r.into()]
    } else {
        let mut support = Vec::with_capacity(a.support.len());
        for &j in &a.support {
            if j == 0 || j > p {
                return Err(Failure::usage(
                    "--support",
                    format!("index {j} outside 1..={p} (indices are 1-based)"),
                ));
            }
            support.push(j - 1);
        }
        let kinds: &[ConstantKind] = match a.kind {
            ConstantKind::All => &[
                ConstantKind::Compatibility,
                ConstantKind::WeakCompatibility,
                ConstantKind::RestrictedEigenvalue,
            ],
            ref k => std::slice::from_ref(k),
        };
        let mut out = Vec::new();
        for k in kinds {
            let r = match k {
                ConstantKind::Compatibility => geometry::compatibility(&m, &support, a.c),
                ConstantKind::WeakCompatibility => geometry::weak_compatibility(&m, &support, a.c),
                _ => geometry::restricted_eigenvalue(&m, &support, a.c, a.starts),
            };
            out.push(r.map_err(|e| Failure::usage("--matrix", e))?.into());
        }
        out
    };
    for r in &reports {
        eprintln!("{:?}: {}", r.kind, format_sig(r.value));
    }
    let json = if reports.len() == 1 {
        to_json(&reports[0])?
    } else {
        to_json(&reports)?
    };
    emit(&json, a.output.as_deref())?;
    Ok(0)
}

pub fn lambda(a: &LambdaArgs) -> Result<u8, Failure> {
    let theorem: Theorem = a
        .theorem
        .parse()
        .map_err(|e| Failure::usage("--theorem", e))?;
    check_level("--delta", a.delta)?;
    check_gamma(a.gamma)?;
    check_bound("--bx", Some(a.bx))?;
    check_bound("--by", Some(a.by))?;
    let (n, n_total) = match (a.nstar, a.n, a.n_total) {
        (Some(s), _, _) => {
            if theorem != Theorem::T1 {
                return Err(Failure::usage(
                    "--nstar",
                    format!("only T1 depends on n* alone; pass --n and --n-total for {theorem}"),
                ));
            }
            (s, 2 * s)
        }
        (None, Some(n), Some(total)) => (n, total),
        (None, Some(n), None)
            if matches!(
                theorem,
                Theorem::T2a | Theorem::T2b | Theorem::T3 | Theorem::Cor1
            ) =>
        {
            (n, n)
        }
        (None, None, _) => {
            return Err(Failure::usage("--n", "required (or --nstar for T1)"));
        }
        (None, Some(_), None) => {
            return Err(Failure::usage(
                "--n-total",
                format!("required for {theorem}"),
            ));
        }
    };
    if n_total < n {
        return Err(Failure::usage(
            "--n-total",
            format!("N = {n_total} is smaller than n = {n}"),
        ));
    }
    let inputs = BoundInputs::new(a.bx, a.by, n, n_total, a.p, a.delta)
        .map(|i| i.with_gamma(a.gamma))
        .map_err(|e| Failure::usage("--p", e))?;
    let value = theorem
        .lambda(&inputs)
        .map_err(|e| Failure::usage("--n-total", e))?;
    if a.explain {
        let ex = LambdaExplanation {
            theorem: theorem.name().to_string(),
            lambda: value,
            formula: formula(theorem),
            n_star: (theorem == Theorem::T1).then(|| inputs.n_star()),
            inputs,
        };
        println!("{}", to_json(&ex)?);
    } else {
        println!("{}", format_sig(value));
    }
    Ok(0)
}

fn run(a: &RunArgs) -> Result<MonteCarloRun, Failure> {
    check_input_path("--config", &a.config)?;
    if a.jobs == Some(0) {
        return Err(Failure::usage("--jobs", "must be at least 1"));
    }
    if a.trials == Some(0) {
        return Err(Failure::usage("--trials", "must be at least 1"));
    }
    let config = ExperimentConfig::load(&a.config).map_err(|e| Failure::usage("--config", e))?;
    let trials = a.trials.unwrap_or(config.trials);
    let seed = a.seed.unwrap_or(config.master_seed);
    eprintln!(
        "running {} trials of {} (seed {seed})",
        trials,
        a.config.display()
    );
    run_monte_carlo(&config, trials, seed, a.jobs).map_err(|e| Failure::usage("--config", e))
}

fn summarize(run: &MonteCarloRun) {
    let r = &run.report;
    let label = r
        .theorem
        .map_or_else(|| r.variant.clone(), |t| t.name().to_string());
    match r.coverage {
        Some(c) => eprintln!(
            "{label}: coverage {} over {} trials (threshold {}), {}",
            format_sig(c),
            r.trials,
            format_sig(1.0 - r.delta - r.slack),
            if r.pass { "pass" } else { "FAIL" }
        ),
        None => eprintln!("{label}: {}", if r.pass { "pass" } else { "FAIL" }),
    }
    for c in &r.checks {
        if !c.pass {
            eprintln!("  check {} failed", c.name);
        }
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<u8, Failure> {
    if let Some(o) = &a.output {
        check_output_path("--output", o)?;
    }
    if let Some(c) = &a.csv {
        check_output_path("--csv", c)?;
    }
    let run = run(&a.run)?;
    summarize(&run);
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        run.write_csv(&mut buf)
            .map_err(|e| Failure::internal(e.to_string()))?;
        output::write_atomic(path, &buf)?;
        eprintln!("wrote {}", path.display());
    }
    let json = run
        .report
        .to_json()
        .map_err(|e| Failure::internal(e.to_string()))?;
    emit(&json, a.output.as_deref())?;
    Ok(0)
}

pub fn verify(a: &VerifyArgs) -> Result<u8, Failure> {
    if let Some(o) = &a.output {
        check_output_path("--output", o)?;
    }
    let run = run(&a.run)?;
    summarize(&run);
    let json = run
        .report
        .to_json()
        .map_err(|e| Failure::internal(e.to_string()))?;
    emit(&json, a.output.as_deref())?;
    Ok(if run.report.pass { 0 } else { 2 })
}
