//! Time-consistency audits.
//!
//! A family of problems indexed by their starting stage is consistent when
//! the strategy computed at stage 0 is still optimal for every subsequent
//! problem. Each audit re-solves the subsequent problems at the restart
//! points its information structure prescribes and measures, for each one,
//!
//!   gap = (value of the original strategy's continuation) - (subproblem optimum).
//!
//! Gaps are nonnegative up to rounding; a gap above the tolerance is an
//! inconsistency witness.

use std::collections::BTreeSet;

use serde::{Serialize, Serializer};

use crate::constrained::{
    induced_plan, solve_constrained, ConstrainedOptions, ConstrainedProblem, Outcome,
};
use crate::error::{Error, Result};
use crate::fokker_planck::{forward_cost, law_trajectory, Law};
use crate::mdp::{
    ensure_deterministic, evaluate_policy_exact, open_loop_cost, solve_deterministic, solve_dp,
    FiniteSocProblem, Policy,
};
use crate::scalar::Scalar;

pub const DEFAULT_AUDIT_TOL: f64 = 1e-9;

/// Plan states with at most this much mass are not restarted from.
pub const RESTART_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "CONSISTENT",
            Verdict::Inconsistent => "INCONSISTENT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartPoint<T> {
    State(usize),
    Law(Vec<T>),
}

impl<T> RestartPoint<T> {
    fn sort_key(&self) -> usize {
        match self {
            RestartPoint::State(x) => *x,
            RestartPoint::Law(_) => 0,
        }
    }
}

/// Optimality gap; `Unbounded` when the original continuation violates the
/// constraint of a subproblem that is itself feasible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gap<T> {
    Finite(T),
    Unbounded,
}

impl<T: Scalar> Gap<T> {
    pub fn exceeds(&self, tol: T) -> bool {
        match *self {
            Gap::Finite(g) => g > tol,
            Gap::Unbounded => true,
        }
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            Gap::Finite(g) => Some(g),
            Gap::Unbounded => None,
        }
    }

    fn extended(&self) -> T {
        self.finite().unwrap_or_else(T::infinity)
    }
}

impl<T: Serialize> Serialize for Gap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gap::Finite(g) => g.serialize(s),
            Gap::Unbounded => s.serialize_str("UNBOUNDED"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness<T> {
    pub stage: usize,
    pub restart: RestartPoint<T>,
    pub subproblem_value: Outcome<T>,
    pub original_value: Outcome<T>,
    pub gap: Gap<T>,
    /// Rolling audits only: whether the re-solved open-loop plan differs
    /// from the tail of the original one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_changed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport<T> {
    pub verdict: Verdict,
    pub tolerance: T,
    pub max_gap: Gap<T>,
    pub witnesses: Vec<Witness<T>>,
}

impl<T: Scalar> AuditReport<T> {
    fn from_witnesses(mut witnesses: Vec<Witness<T>>, tolerance: T) -> Self {
        witnesses.sort_by_key(|w| (w.stage, w.restart.sort_key()));
        let max_gap = witnesses
            .iter()
            .map(|w| w.gap)
            .fold(Gap::Finite(T::zero()), |acc, g| {
                if g.extended() > acc.extended() {
                    g
                } else {
                    acc
                }
            });
        let verdict = if witnesses.iter().any(|w| w.gap.exceeds(tolerance)) {
            Verdict::Inconsistent
        } else {
            Verdict::Consistent
        };
        Self {
            verdict,
            tolerance,
            max_gap,
            witnesses,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.verdict == Verdict::Consistent
    }

    /// Witnesses whose gap exceeds the tolerance.
    pub fn violations(&self) -> impl Iterator<Item = &Witness<T>> {
        self.witnesses
            .iter()
            .filter(move |w| w.gap.exceeds(self.tolerance))
    }
}

fn negative_slack<T: Scalar>(reference: T, horizon: usize) -> T {
    T::lit(T::TIE_TOL) * T::lit((horizon + 1) as f64) * (T::one() + reference.abs())
}

fn gap_between<T: Scalar>(
    stage: usize,
    horizon: usize,
    original: Outcome<T>,
    subproblem: Outcome<T>,
) -> Result<Gap<T>> {
    match (original, subproblem) {
        (Outcome::Value(o), Outcome::Value(s)) => {
            let gap = o - s;
            if gap < -negative_slack(s, horizon) {
                return Err(Error::NegativeGap {
                    stage,
                    gap: gap.as_f64(),
                });
            }
            Ok(Gap::Finite(gap))
        }
        (Outcome::Infeasible, Outcome::Value(_)) => Ok(Gap::Unbounded),
        (Outcome::Infeasible, Outcome::Infeasible) => Ok(Gap::Finite(T::zero())),
        (Outcome::Value(_), Outcome::Infeasible) => Err(Error::NegativeGap {
            stage,
            gap: f64::NEG_INFINITY,
        }),
    }
}

/// Classical information structure: strategies are state feedbacks, and
/// every subsequent problem starts from an observed state. Restart points
/// are all states reached with positive probability under the optimal
/// policy from some initial state.
pub fn audit_unconstrained<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    tolerance: T,
) -> Result<AuditReport<T>> {
    let (_, policy) = solve_dp(problem)?;
    let horizon = problem.horizon();
    let mut reached = vec![BTreeSet::new(); horizon];
    for x0 in 0..problem.state_size(0) {
        let start = Law::dirac(0, problem.state_size(0), x0)?;
        let laws = law_trajectory(problem, &policy, &start)?;
        for (t, set) in reached.iter_mut().enumerate().skip(1) {
            set.extend(laws[t].support(T::zero()).map(|(x, _)| x));
        }
    }
    let mut witnesses = Vec::new();
    for (t, states) in reached.iter().enumerate().skip(1) {
        let sub = problem.truncate(t)?;
        let (sub_values, _) = solve_dp(&sub)?;
        let tail = policy.tail(t);
        for &x in states {
            let start = Law::dirac(0, sub.state_size(0), x)?;
            let original = evaluate_policy_exact(&sub, &tail, &start)?;
            let optimum = sub_values.at(0)[x];
            let gap = gap_between(
                t,
                sub.horizon(),
                Outcome::Value(original),
                Outcome::Value(optimum),
            )?;
            witnesses.push(Witness {
                stage: t,
                restart: RestartPoint::State(x),
                subproblem_value: Outcome::Value(optimum),
                original_value: Outcome::Value(original),
                gap,
                plan_changed: None,
            });
        }
    }
    Ok(AuditReport::from_witnesses(witnesses, tolerance))
}

/// Value of running `policy` on `problem` from `mu0`, or `Infeasible` when
/// the resulting final law breaks the constraint.
fn continuation<T: Scalar>(
    problem: &ConstrainedProblem<T>,
    policy: &Policy,
    mu0: &Law<T>,
    options: &ConstrainedOptions,
) -> Result<Outcome<T>> {
    let laws = law_trajectory(problem.base(), policy, mu0)?;
    let last = laws.last().expect("nonempty trajectory");
    if problem
        .constraint()
        .is_satisfied(last, T::lit(options.feasibility_tol))
    {
        Ok(Outcome::Value(forward_cost(problem.base(), policy, mu0)?))
    } else {
        Ok(Outcome::Infeasible)
    }
}

/// Naive information structure: the stage-0 plan is a sequence of state
/// feedbacks, and each subsequent problem restarts from an observed state
/// (a Dirac law) with the same constraint level. Restart points are the
/// states charged by the optimal plan's law at each stage.
///
/// Fails with [`Error::Infeasible`] when the stage-0 problem is infeasible.
pub fn audit_constrained_naive<T: Scalar>(
    problem: &ConstrainedProblem<T>,
    mu0: &Law<T>,
    options: &ConstrainedOptions,
    tolerance: T,
) -> Result<AuditReport<T>> {
    let solution = solve_constrained(problem, mu0, options)?;
    let plan = induced_plan(&solution, mu0)?;
    let policy = plan.policy();
    let horizon = problem.base().horizon();
    let mut witnesses = Vec::new();
    for t in 1..horizon {
        let sub = problem.truncate(t)?;
        let tail = policy.tail(t);
        let n = sub.base().state_size(0);
        for (x, _) in plan.law(t).support(T::lit(RESTART_MASS)) {
            let start = Law::dirac(0, n, x)?;
            let optimum = solve_constrained(&sub, &start, options)?.value();
            let original = continuation(&sub, &tail, &start, options)?;
            let gap = gap_between(t, sub.base().horizon(), original, optimum)?;
            witnesses.push(Witness {
                stage: t,
                restart: RestartPoint::State(x),
                subproblem_value: optimum,
                original_value: original,
                gap,
                plan_changed: None,
            });
        }
    }
    Ok(AuditReport::from_witnesses(witnesses, tolerance))
}

/// Law-augmented information structure: each subsequent problem restarts
/// from the law the optimal plan has reached, and is solved over laws.
///
/// Fails with [`Error::Infeasible`] when the stage-0 problem is infeasible.
pub fn audit_constrained_law<T: Scalar>(
    problem: &ConstrainedProblem<T>,
    mu0: &Law<T>,
    options: &ConstrainedOptions,
    tolerance: T,
) -> Result<AuditReport<T>> {
    let solution = solve_constrained(problem, mu0, options)?;
    let plan = induced_plan(&solution, mu0)?;
    let policy = plan.policy();
    let horizon = problem.base().horizon();
    let mut witnesses = Vec::new();
    for t in 1..horizon {
        let sub = problem.truncate(t)?;
        let start = plan.law(t).at_stage(0);
        let optimum = solve_constrained(&sub, &start, options)?.value();
        let original = continuation(&sub, &policy.tail(t), &start, options)?;
        let gap = gap_between(t, sub.base().horizon(), original, optimum)?;
        witnesses.push(Witness {
            stage: t,
            restart: RestartPoint::Law(start.weights().to_vec()),
            subproblem_value: optimum,
            original_value: original,
            gap,
            plan_changed: None,
        });
    }
    Ok(AuditReport::from_witnesses(witnesses, tolerance))
}

/// Rolling open-loop re-planning on a noise-free problem.
///
/// The stage-0 open-loop plan is computed from `initial_state`. The system
/// is then rolled forward: at each stage the realized state is observed,
/// the subsequent problem is re-solved from it, and its first control is
/// applied. `overrides[t]`, when set, replaces the state reached at stage
/// `t + 1` (a model perturbation). Witnesses compare the original plan's
/// tail with the re-solved optimum at each realized state.
pub fn audit_deterministic_rolling<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    initial_state: usize,
    overrides: &[Option<usize>],
    tolerance: T,
) -> Result<AuditReport<T>> {
    ensure_deterministic(problem)?;
    let horizon = problem.horizon();
    if overrides.len() != horizon {
        return Err(Error::DimensionMismatch {
            what: "perturbation schedule",
            expected: horizon,
            found: overrides.len(),
        });
    }
    for (t, o) in overrides.iter().enumerate() {
        if let Some(y) = *o {
            if y >= problem.state_size(t + 1) {
                return Err(Error::IndexOutOfRange {
                    what: "perturbed state",
                    index: y,
                    size: problem.state_size(t + 1),
                });
            }
        }
    }
    let (original_plan, _) = solve_deterministic(problem, initial_state)?;
    let mut current = original_plan.clone();
    let mut offset = 0;
    let mut x = initial_state;
    let mut witnesses = Vec::new();
    for t in 0..horizon {
        if t > 0 {
            let sub = problem.truncate(t)?;
            let (replanned, optimum) = solve_deterministic(&sub, x)?;
            let original = open_loop_cost(&sub, x, &original_plan[t..])?;
            let gap = gap_between(
                t,
                sub.horizon(),
                Outcome::Value(original),
                Outcome::Value(optimum),
            )?;
            witnesses.push(Witness {
                stage: t,
                restart: RestartPoint::State(x),
                subproblem_value: Outcome::Value(optimum),
                original_value: Outcome::Value(original),
                gap,
                plan_changed: Some(replanned[..] != original_plan[t..]),
            });
            current = replanned;
            offset = t;
        }
        let u = current[t - offset];
        x = overrides[t].unwrap_or_else(|| problem.next_state(t, x, u, 0));
    }
    Ok(AuditReport::from_witnesses(witnesses, tolerance))
}
