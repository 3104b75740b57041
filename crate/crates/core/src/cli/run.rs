//! Experiment runs and result files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use serde::Serialize;
use thiserror::Error;

use super::output::{format_float, write_json};
use super::scenario::{Experiment, InitialSpec, Scenario};
use crate::audit::{
    audit_constrained_law, audit_constrained_naive, audit_deterministic_rolling,
    audit_unconstrained, AuditReport, DEFAULT_AUDIT_TOL,
};
use crate::constrained::{
    induced_plan, solve_constrained, ConstrainedOptions, ConstrainedProblem, LawPolicy, Outcome,
    Plan,
};
use crate::error::Error;
use crate::fokker_planck::{forward_cost, pairing, CostFunction, Law};
use crate::generate::rng_for;
use crate::mdp::{sample_noises, simulate, solve_dp, FiniteSocProblem, Policy};

pub const SOLUTION_FILE: &str = "solution.json";
pub const AUDIT_FILE: &str = "audit.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Command-line overrides of scenario settings.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub cap: Option<u64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// The stage-0 constrained problem has no feasible plan.
    Infeasible,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Infeasible => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
}

struct Settings {
    seed: u64,
    tolerance: f64,
    options: ConstrainedOptions,
}

impl Settings {
    fn new(scenario: &Scenario, run: &RunOptions) -> Self {
        let mut options = ConstrainedOptions::default();
        if let Some(cap) = run.cap.or(scenario.cap) {
            options.cap = u128::from(cap);
        }
        Self {
            seed: run.seed.unwrap_or(scenario.seed),
            tolerance: run
                .tolerance
                .or(scenario.tolerance)
                .unwrap_or(DEFAULT_AUDIT_TOL),
            options,
        }
    }
}

/// Runs `experiment` on `scenario`, writing result files into
/// `run.out_dir`.
pub fn run(
    scenario: &Scenario,
    experiment: &Experiment,
    run: &RunOptions,
) -> Result<Status, RunError> {
    let mut checked = scenario.clone();
    checked.experiment = experiment.clone();
    let issues = checked.issues();
    if !issues.is_empty() {
        return Err(RunError::Invalid(issues));
    }
    if run.cap == Some(0) {
        return Err(RunError::Invalid(vec!["cap: must be positive".into()]));
    }
    fs::create_dir_all(&run.out_dir).map_err(|source| RunError::Io {
        path: run.out_dir.clone(),
        source,
    })?;
    let settings = Settings::new(scenario, run);
    let problem = scenario.problem().map_err(RunError::Invalid)?;
    let constrained = scenario.constrained().map_err(RunError::Invalid)?;
    let mu0 = scenario.initial_law().map_err(RunError::Invalid)?;
    let out = &run.out_dir;

    match experiment {
        Experiment::Solve { simulations } => match &constrained {
            Some(cp) => solve_constrained_run(cp, &mu0, &settings, out),
            None => solve_unconstrained_run(&problem, &mu0, *simulations, &settings, out),
        },
        Experiment::AuditUnconstrained => {
            let report = audit_unconstrained(&problem, settings.tolerance)?;
            write_audit(out, experiment, Some(&report))
        }
        Experiment::AuditNaive | Experiment::AuditLaw => {
            let cp = constrained.as_ref().expect("checked by issues()");
            let audit = if matches!(experiment, Experiment::AuditNaive) {
                audit_constrained_naive
            } else {
                audit_constrained_law
            };
            match audit(cp, &mu0, &settings.options, settings.tolerance) {
                Ok(report) => write_audit(out, experiment, Some(&report)),
                Err(Error::Infeasible) => write_audit(out, experiment, None),
                Err(e) => Err(e.into()),
            }
        }
        Experiment::AuditRolling { overrides } => {
            let InitialSpec::State(x0) = scenario.initial else {
                unreachable!("checked by issues()")
            };
            let report = audit_deterministic_rolling(&problem, x0, overrides, settings.tolerance)?;
            write_audit(out, experiment, Some(&report))
        }
        Experiment::Sweep { levels } => {
            let cp = constrained.as_ref().expect("checked by issues()");
            sweep_run(cp, &mu0, levels, &settings, out)
        }
    }
}

#[derive(Serialize)]
struct Simulation {
    seed: u64,
    count: usize,
    mean: f64,
    standard_error: f64,
}

#[derive(Serialize)]
struct UnconstrainedSolution<'a> {
    experiment: &'static str,
    status: &'static str,
    value: f64,
    forward_value: f64,
    policy: &'a [Vec<usize>],
    cost_to_go: &'a [Vec<f64>],
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<Simulation>,
}

fn solve_unconstrained_run(
    problem: &FiniteSocProblem<f64>,
    mu0: &Law<f64>,
    simulations: usize,
    settings: &Settings,
    out: &Path,
) -> Result<Status, RunError> {
    let (values, policy) = solve_dp(problem)?;
    let value = pairing(&CostFunction::new(0, values.at(0).to_vec())?, mu0)?;
    let forward_value = forward_cost(problem, &policy, mu0)?;
    let simulation = (simulations > 0)
        .then(|| monte_carlo(problem, &policy, mu0, simulations, settings.seed))
        .transpose()?;
    write_file(
        out,
        SOLUTION_FILE,
        &UnconstrainedSolution {
            experiment: "solve",
            status: "OPTIMAL",
            value,
            forward_value,
            policy: policy.stages(),
            cost_to_go: values.stages(),
            simulation,
        },
    )?;
    Ok(Status::Success)
}

fn monte_carlo(
    problem: &FiniteSocProblem<f64>,
    policy: &Policy,
    mu0: &Law<f64>,
    count: usize,
    seed: u64,
) -> Result<Simulation, Error> {
    let mut rng = rng_for(seed);
    let start = WeightedIndex::new(mu0.weights()).map_err(|e| Error::InvalidLaw(e.to_string()))?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..count {
        let x0 = start.sample(&mut rng);
        let draws = sample_noises(problem, &mut rng);
        let cost = simulate(problem, policy, x0, &draws)?.cost;
        sum += cost;
        sum_sq += cost * cost;
    }
    let n = count as f64;
    let mean = sum / n;
    let variance = if count > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(Simulation {
        seed,
        count,
        mean,
        standard_error: (variance / n).sqrt(),
    })
}

#[derive(Serialize)]
struct ConstrainedSolutionFile<'a> {
    experiment: &'static str,
    status: &'static str,
    value: Outcome<f64>,
    reachable_laws: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<Plan<f64>>,
    law_policy: &'a LawPolicy<f64>,
}

fn solve_constrained_run(
    problem: &ConstrainedProblem<f64>,
    mu0: &Law<f64>,
    settings: &Settings,
    out: &Path,
) -> Result<Status, RunError> {
    let solution = solve_constrained(problem, mu0, &settings.options)?;
    let value = solution.value();
    let plan = match induced_plan(&solution, mu0) {
        Ok(plan) => Some(plan),
        Err(Error::Infeasible) => None,
        Err(e) => return Err(e.into()),
    };
    write_file(
        out,
        SOLUTION_FILE,
        &ConstrainedSolutionFile {
            experiment: "solve",
            status: if value.is_feasible() {
                "OPTIMAL"
            } else {
                "INFEASIBLE"
            },
            value,
            reachable_laws: solution.graph().counts(),
            plan,
            law_policy: solution.law_policy(),
        },
    )?;
    Ok(if value.is_feasible() {
        Status::Success
    } else {
        Status::Infeasible
    })
}

#[derive(Serialize)]
struct AuditFile<'a> {
    experiment: &'static str,
    status: &'static str,
    #[serde(flatten)]
    report: Option<&'a AuditReport<f64>>,
}

fn write_audit(
    out: &Path,
    experiment: &Experiment,
    report: Option<&AuditReport<f64>>,
) -> Result<Status, RunError> {
    write_file(
        out,
        AUDIT_FILE,
        &AuditFile {
            experiment: experiment.name(),
            status: if report.is_some() {
                "AUDITED"
            } else {
                "INFEASIBLE"
            },
            report,
        },
    )?;
    Ok(if report.is_some() {
        Status::Success
    } else {
        Status::Infeasible
    })
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_levels() -> Vec<f64> {
    (0..=10).map(|k| f64::from(k) / 10.0).collect()
}

fn sweep_run(
    problem: &ConstrainedProblem<f64>,
    mu0: &Law<f64>,
    levels: &[f64],
    settings: &Settings,
    out: &Path,
) -> Result<Status, RunError> {
    let levels = if levels.is_empty() {
        default_levels()
    } else {
        levels.to_vec()
    };
    let path = out.join(SWEEP_FILE);
    let csv_err = |source| RunError::Csv {
        path: path.clone(),
        source,
    };
    let mut writer = csv::Writer::from_path(&path).map_err(csv_err)?;
    writer
        .write_record(["level", "value", "naive_verdict", "law_verdict"])
        .map_err(csv_err)?;
    for level in levels {
        let at_level = problem.with_level(level)?;
        let value = solve_constrained(&at_level, mu0, &settings.options)?.value();
        let row = match value {
            Outcome::Infeasible => [
                format_float(level),
                "INFEASIBLE".into(),
                "N/A".into(),
                "N/A".into(),
            ],
            Outcome::Value(v) => {
                let naive =
                    audit_constrained_naive(&at_level, mu0, &settings.options, settings.tolerance)?;
                let law =
                    audit_constrained_law(&at_level, mu0, &settings.options, settings.tolerance)?;
                [
                    format_float(level),
                    format_float(v),
                    naive.verdict.to_string(),
                    law.verdict.to_string(),
                ]
            }
        };
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(Status::Success)
}

fn write_file<S: Serialize>(out: &Path, name: &str, value: &S) -> Result<(), RunError> {
    let path = out.join(name);
    write_json(&path, value).map_err(|source| RunError::Io { path, source })
}
