//! JSON scenario files.
//!
//! Tables are nested arrays indexed `[stage][state][control][noise]`. See
//! `docs/scenario-schema.md` for the full format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constrained::{
    augment_joint_chance, make_chance_constraint, ConstrainedProblem, ExpectationConstraint,
    JointThreshold,
};
use crate::fokker_planck::Law;
use crate::mdp::FiniteSocProblem;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: cannot read scenario: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: invalid scenario:\n  - {}", path.display(), issues.join("\n  - "))]
    Invalid { path: PathBuf, issues: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub problem: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

/// One stage of a table, indexed `[state][control][noise]`.
pub type StageTable<V> = Vec<Vec<Vec<V>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub state_sizes: Vec<usize>,
    pub control_sizes: Vec<usize>,
    pub noise_laws: Vec<Vec<f64>>,
    /// `dynamics[t][x][u][w]`: next-state index.
    pub dynamics: Vec<StageTable<usize>>,
    /// `stage_costs[t][x][u][w]`.
    pub stage_costs: Vec<StageTable<f64>>,
    pub final_cost: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_labels: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintSpec {
    /// `E[g(x_N)] <= level`.
    Expectation { g: Vec<f64>, level: f64 },
    /// `P(h(x_N) >= b) <= pi`.
    Chance { h: Vec<f64>, b: f64, pi: f64 },
    /// `P(g_t(x_t) >= b_t for t = 1..N) <= pi`, one threshold per stage.
    JointChance {
        thresholds: Vec<ThresholdSpec>,
        pi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub g: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpec {
    State(usize),
    Law(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Solve {
        /// Monte-Carlo trajectories simulated alongside an unconstrained solve.
        #[serde(default)]
        simulations: usize,
    },
    AuditUnconstrained,
    AuditNaive,
    AuditLaw,
    AuditRolling {
        /// One entry per transition; `null` keeps the modelled next state.
        overrides: Vec<Option<usize>>,
    },
    Sweep {
        /// Constraint levels; empty means `0.0, 0.1, ..., 1.0`.
        #[serde(default)]
        levels: Vec<f64>,
    },
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment::Solve { simulations: 0 }
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Solve { .. } => "solve",
            Experiment::AuditUnconstrained => "audit-unconstrained",
            Experiment::AuditNaive => "audit-naive",
            Experiment::AuditLaw => "audit-law",
            Experiment::AuditRolling { .. } => "audit-rolling",
            Experiment::Sweep { .. } => "sweep",
        }
    }

    pub fn is_audit(&self) -> bool {
        matches!(
            self,
            Experiment::AuditUnconstrained
                | Experiment::AuditNaive
                | Experiment::AuditLaw
                | Experiment::AuditRolling { .. }
        )
    }
}

impl ProblemSpec {
    /// Nested tables for an in-memory problem.
    pub fn from_problem(problem: &FiniteSocProblem<f64>) -> Self {
        let horizon = problem.horizon();
        let nest = |t: usize| -> (StageTable<usize>, StageTable<f64>) {
            let (nx, nu, nw) = (
                problem.state_size(t),
                problem.control_size(t),
                problem.noise_size(t),
            );
            let dynamics = (0..nx)
                .map(|x| {
                    (0..nu)
                        .map(|u| (0..nw).map(|w| problem.next_state(t, x, u, w)).collect())
                        .collect()
                })
                .collect();
            let costs = (0..nx)
                .map(|x| {
                    (0..nu)
                        .map(|u| (0..nw).map(|w| problem.stage_cost(t, x, u, w)).collect())
                        .collect()
                })
                .collect();
            (dynamics, costs)
        };
        let (dynamics, stage_costs) = (0..horizon).map(nest).unzip();
        Self {
            state_sizes: problem.state_sizes().to_vec(),
            control_sizes: problem.control_sizes().to_vec(),
            noise_laws: (0..horizon)
                .map(|t| problem.noise_law(t).to_vec())
                .collect(),
            dynamics,
            stage_costs,
            final_cost: problem.final_cost().to_vec(),
            state_labels: None,
        }
    }

    fn shape_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let horizon = self.control_sizes.len();
        if horizon == 0 {
            issues.push("problem.control_sizes: horizon must be at least 1".into());
            return issues;
        }
        if self.state_sizes.len() != horizon + 1 {
            issues.push(format!(
                "problem.state_sizes: expected {} entries, found {}",
                horizon + 1,
                self.state_sizes.len()
            ));
            return issues;
        }
        for (what, len) in [
            ("noise_laws", self.noise_laws.len()),
            ("dynamics", self.dynamics.len()),
            ("stage_costs", self.stage_costs.len()),
        ] {
            if len != horizon {
                issues.push(format!(
                    "problem.{what}: expected {horizon} stages, found {len}"
                ));
            }
        }
        if !issues.is_empty() {
            return issues;
        }
        for t in 0..horizon {
            let (nx, nu, nw) = (
                self.state_sizes[t],
                self.control_sizes[t],
                self.noise_laws[t].len(),
            );
            if nx == 0 || nu == 0 || nw == 0 {
                issues.push(format!("stage {t}: empty state, control or noise space"));
                continue;
            }
            check_nested(&mut issues, "dynamics", t, &self.dynamics[t], nx, nu, nw);
            check_nested(
                &mut issues,
                "stage_costs",
                t,
                &self.stage_costs[t],
                nx,
                nu,
                nw,
            );
        }
        if self.state_sizes[horizon] == 0 {
            issues.push(format!("stage {horizon}: empty state space"));
        }
        if self.final_cost.len() != self.state_sizes[horizon] {
            issues.push(format!(
                "problem.final_cost: expected {} entries, found {}",
                self.state_sizes[horizon],
                self.final_cost.len()
            ));
        }
        if let Some(labels) = &self.state_labels {
            if labels.len() != horizon + 1
                || labels
                    .iter()
                    .zip(&self.state_sizes)
                    .any(|(l, &n)| l.len() != n)
            {
                issues.push("problem.state_labels: one label per state and stage expected".into());
            }
        }
        issues
    }

    pub fn build(&self) -> Result<FiniteSocProblem<f64>, Vec<String>> {
        let issues = self.shape_issues();
        if !issues.is_empty() {
            return Err(issues);
        }
        let flat_dyn = self
            .dynamics
            .iter()
            .map(|s| s.iter().flatten().flatten().copied().collect())
            .collect();
        let flat_cost = self
            .stage_costs
            .iter()
            .map(|s| s.iter().flatten().flatten().copied().collect())
            .collect();
        FiniteSocProblem::new(
            self.state_sizes.clone(),
            self.control_sizes.clone(),
            self.noise_laws.clone(),
            flat_dyn,
            flat_cost,
            self.final_cost.clone(),
        )
        .map_err(|e| vec![e.to_string()])
    }
}

fn check_nested<V>(
    issues: &mut Vec<String>,
    what: &str,
    t: usize,
    table: &[Vec<Vec<V>>],
    nx: usize,
    nu: usize,
    nw: usize,
) {
    if table.len() != nx {
        issues.push(format!(
            "problem.{what}[{t}]: expected {nx} states, found {}",
            table.len()
        ));
        return;
    }
    for (x, row) in table.iter().enumerate() {
        if row.len() != nu {
            issues.push(format!(
                "problem.{what}[{t}][{x}]: expected {nu} controls, found {}",
                row.len()
            ));
            continue;
        }
        for (u, cell) in row.iter().enumerate() {
            if cell.len() != nw {
                issues.push(format!(
                    "problem.{what}[{t}][{x}][{u}]: expected {nw} noises, found {}",
                    cell.len()
                ));
            }
        }
    }
}

impl Scenario {
    /// A `solve` scenario for an in-memory problem.
    pub fn from_problem(problem: &FiniteSocProblem<f64>, initial: InitialSpec) -> Self {
        Self {
            name: None,
            problem: ProblemSpec::from_problem(problem),
            constraint: None,
            initial,
            experiment: Experiment::default(),
            seed: 0,
            cap: None,
            tolerance: None,
        }
    }

    pub fn problem(&self) -> Result<FiniteSocProblem<f64>, Vec<String>> {
        self.problem.build()
    }

    /// The constrained problem after chance-to-expectation reduction or
    /// joint-chance augmentation, if the scenario has a constraint.
    pub fn constrained(&self) -> Result<Option<ConstrainedProblem<f64>>, Vec<String>> {
        let Some(spec) = &self.constraint else {
            return Ok(None);
        };
        let base = self.problem()?;
        let built = match spec {
            ConstraintSpec::Expectation { g, level } => {
                ExpectationConstraint::new(g.clone(), *level)
                    .and_then(|c| ConstrainedProblem::new(base, c))
            }
            ConstraintSpec::Chance { h, b, pi } => {
                make_chance_constraint(h, *b, *pi).and_then(|c| ConstrainedProblem::new(base, c))
            }
            ConstraintSpec::JointChance { thresholds, pi } => {
                let th: Vec<JointThreshold<f64>> = thresholds
                    .iter()
                    .map(|t| JointThreshold {
                        g: t.g.clone(),
                        b: t.b,
                    })
                    .collect();
                augment_joint_chance(&base, &th, *pi)
            }
        };
        built
            .map(Some)
            .map_err(|e| vec![format!("constraint: {e}")])
    }

    pub fn initial_law(&self) -> Result<Law<f64>, Vec<String>> {
        let n = self
            .problem
            .state_sizes
            .first()
            .copied()
            .ok_or_else(|| vec!["problem.state_sizes: empty".to_string()])?;
        match &self.initial {
            InitialSpec::State(x) => Law::dirac(0, n, *x),
            InitialSpec::Law(w) => {
                if w.len() != n {
                    return Err(vec![format!(
                        "initial.law: expected {n} weights, found {}",
                        w.len()
                    )]);
                }
                Law::new(0, w.clone())
            }
        }
        .map_err(|e| vec![format!("initial: {e}")])
    }

    /// Every problem with the scenario, listed exhaustively.
    pub fn issues(&self) -> Vec<String> {
        let problem = match self.problem() {
            Ok(p) => p,
            Err(issues) => return issues,
        };
        let mut issues: Vec<String> = problem
            .validate()
            .violations
            .iter()
            .map(ToString::to_string)
            .collect();
        if let Err(mut e) = self.initial_law() {
            issues.append(&mut e);
        }
        let constrained = match self.constrained() {
            Ok(c) => c,
            Err(mut e) => {
                issues.append(&mut e);
                None
            }
        };
        let has_constraint = self.constraint.is_some();
        match &self.experiment {
            Experiment::AuditNaive | Experiment::AuditLaw | Experiment::Sweep { .. }
                if !has_constraint =>
            {
                issues.push(format!(
                    "experiment {} needs a constraint block",
                    self.experiment.name()
                ));
            }
            Experiment::AuditRolling { overrides } => {
                if !problem.is_deterministic() {
                    issues.push("experiment audit-rolling needs a noise-free problem".into());
                }
                if !matches!(self.initial, InitialSpec::State(_)) {
                    issues.push("experiment audit-rolling needs an initial state".into());
                }
                if overrides.len() != problem.horizon() {
                    issues.push(format!(
                        "experiment.overrides: expected {} entries, found {}",
                        problem.horizon(),
                        overrides.len()
                    ));
                } else {
                    for (t, o) in overrides.iter().enumerate() {
                        if let Some(y) = *o {
                            if y >= problem.state_size(t + 1) {
                                issues.push(format!(
                                    "experiment.overrides[{t}]: state {y} out of range (stage {} has {})",
                                    t + 1,
                                    problem.state_size(t + 1)
                                ));
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        if let Experiment::Sweep { levels } = &self.experiment {
            if levels.iter().any(|a| !a.is_finite()) {
                issues.push("experiment.levels: non-finite level".into());
            }
        }
        if constrained.is_none() && has_constraint && issues.is_empty() {
            issues.push("constraint: could not be built".into());
        }
        if self.cap == Some(0) {
            issues.push("cap: must be positive".into());
        }
        if let Some(tol) = self.tolerance {
            if !(tol >= 0.0 && tol.is_finite()) {
                issues.push(format!("tolerance: {tol} is not a nonnegative number"));
            }
        }
        issues
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let scenario =
        parse_scenario(&text).map_err(|(field, line, column, message)| ScenarioError::Parse {
            path: path.to_path_buf(),
            field,
            line,
            column,
            message,
        })?;
    let issues = scenario.issues();
    if issues.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid {
            path: path.to_path_buf(),
            issues,
        })
    }
}

fn parse_scenario(text: &str) -> Result<Scenario, (String, usize, usize, String)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        (field, inner.line(), inner.column(), inner.to_string())
    })
}
