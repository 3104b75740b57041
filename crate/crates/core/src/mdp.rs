//! Finite-horizon stochastic control problems and their classical solution.
//!
//! Stages are indexed `0..=N` relative to the initial time. The transition
//! out of stage `t` is driven by the noise drawn from `noise_law(t)`, so a
//! problem with horizon `N` has `N + 1` state spaces and `N` control and
//! noise spaces. Every space is a finite index set `0..n`.

use std::collections::BTreeMap;
use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fokker_planck::Law;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSocProblem<T> {
    state_sizes: Vec<usize>,
    control_sizes: Vec<usize>,
    noise_laws: Vec<Vec<T>>,
    /// `dynamics[t][(x * nu + u) * nw + w]` is the next-state index.
    dynamics: Vec<Vec<usize>>,
    /// Same layout as `dynamics`.
    stage_costs: Vec<Vec<T>>,
    final_cost: Vec<T>,
}

impl<T: Scalar> FiniteSocProblem<T> {
    /// Builds a problem from flat tables, checking only that every table has
    /// the length implied by the space sizes. Probabilistic and codomain
    /// invariants are reported by [`FiniteSocProblem::validate`].
    pub fn new(
        state_sizes: Vec<usize>,
        control_sizes: Vec<usize>,
        noise_laws: Vec<Vec<T>>,
        dynamics: Vec<Vec<usize>>,
        stage_costs: Vec<Vec<T>>,
        final_cost: Vec<T>,
    ) -> Result<Self> {
        let horizon = control_sizes.len();
        if horizon == 0 {
            return Err(Error::Shape("horizon must be at least one stage".into()));
        }
        if state_sizes.len() != horizon + 1 {
            return Err(Error::Shape(format!(
                "{} state spaces given for horizon {horizon}, expected {}",
                state_sizes.len(),
                horizon + 1
            )));
        }
        if noise_laws.len() != horizon || dynamics.len() != horizon || stage_costs.len() != horizon
        {
            return Err(Error::Shape(format!(
                "horizon {horizon} needs {horizon} noise laws, dynamics and cost tables \
                 (got {}, {}, {})",
                noise_laws.len(),
                dynamics.len(),
                stage_costs.len()
            )));
        }
        if let Some(t) = state_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Shape(format!("state space at stage {t} is empty")));
        }
        if let Some(t) = control_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Shape(format!("control space at stage {t} is empty")));
        }
        if let Some(t) = noise_laws.iter().position(Vec::is_empty) {
            return Err(Error::Shape(format!("noise space at stage {t} is empty")));
        }
        for t in 0..horizon {
            let cells = state_sizes[t] * control_sizes[t] * noise_laws[t].len();
            if dynamics[t].len() != cells {
                return Err(Error::Shape(format!(
                    "dynamics table at stage {t} has {} entries, expected {cells}",
                    dynamics[t].len()
                )));
            }
            if stage_costs[t].len() != cells {
                return Err(Error::Shape(format!(
                    "cost table at stage {t} has {} entries, expected {cells}",
                    stage_costs[t].len()
                )));
            }
        }
        if final_cost.len() != state_sizes[horizon] {
            return Err(Error::Shape(format!(
                "final cost has {} entries, expected {}",
                final_cost.len(),
                state_sizes[horizon]
            )));
        }
        Ok(Self {
            state_sizes,
            control_sizes,
            noise_laws,
            dynamics,
            stage_costs,
            final_cost,
        })
    }

    /// Tabulates dynamics and costs from closures `(t, x, u, w)`.
    pub fn from_fn(
        state_sizes: Vec<usize>,
        control_sizes: Vec<usize>,
        noise_laws: Vec<Vec<T>>,
        dynamics: impl Fn(usize, usize, usize, usize) -> usize,
        stage_cost: impl Fn(usize, usize, usize, usize) -> T,
        final_cost: impl Fn(usize) -> T,
    ) -> Result<Self> {
        let horizon = control_sizes.len();
        if state_sizes.len() != horizon + 1 || noise_laws.len() != horizon {
            return Err(Error::Shape(format!(
                "horizon {horizon} needs {} state spaces and {horizon} noise laws",
                horizon + 1
            )));
        }
        let mut dyn_tables = Vec::with_capacity(horizon);
        let mut cost_tables = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let (nx, nu, nw) = (state_sizes[t], control_sizes[t], noise_laws[t].len());
            let mut dt = Vec::with_capacity(nx * nu * nw);
            let mut ct = Vec::with_capacity(nx * nu * nw);
            for x in 0..nx {
                for u in 0..nu {
                    for w in 0..nw {
                        dt.push(dynamics(t, x, u, w));
                        ct.push(stage_cost(t, x, u, w));
                    }
                }
            }
            dyn_tables.push(dt);
            cost_tables.push(ct);
        }
        let fc = (0..state_sizes[horizon]).map(final_cost).collect();
        Self::new(
            state_sizes,
            control_sizes,
            noise_laws,
            dyn_tables,
            cost_tables,
            fc,
        )
    }

    pub fn horizon(&self) -> usize {
        self.control_sizes.len()
    }

    pub fn state_size(&self, t: usize) -> usize {
        self.state_sizes[t]
    }

    pub fn state_sizes(&self) -> &[usize] {
        &self.state_sizes
    }

    pub fn control_size(&self, t: usize) -> usize {
        self.control_sizes[t]
    }

    pub fn control_sizes(&self) -> &[usize] {
        &self.control_sizes
    }

    pub fn noise_size(&self, t: usize) -> usize {
        self.noise_laws[t].len()
    }

    pub fn noise_law(&self, t: usize) -> &[T] {
        &self.noise_laws[t]
    }

    fn cell(&self, t: usize, x: usize, u: usize, w: usize) -> usize {
        (x * self.control_sizes[t] + u) * self.noise_laws[t].len() + w
    }

    pub fn next_state(&self, t: usize, x: usize, u: usize, w: usize) -> usize {
        self.dynamics[t][self.cell(t, x, u, w)]
    }

    pub fn stage_cost(&self, t: usize, x: usize, u: usize, w: usize) -> T {
        self.stage_costs[t][self.cell(t, x, u, w)]
    }

    pub fn final_cost(&self) -> &[T] {
        &self.final_cost
    }

    pub fn dynamics_table(&self, t: usize) -> &[usize] {
        &self.dynamics[t]
    }

    pub fn cost_table(&self, t: usize) -> &[T] {
        &self.stage_costs[t]
    }

    /// True when every noise space is a singleton.
    pub fn is_deterministic(&self) -> bool {
        self.noise_laws.iter().all(|law| law.len() == 1)
    }

    /// The subsequent problem starting at stage `from`, with the same final
    /// time and final cost. Stage `from` of `self` becomes stage 0.
    pub fn truncate(&self, from: usize) -> Result<Self> {
        if from >= self.horizon() {
            return Err(Error::IndexOutOfRange {
                what: "truncation stage",
                index: from,
                size: self.horizon(),
            });
        }
        Ok(Self {
            state_sizes: self.state_sizes[from..].to_vec(),
            control_sizes: self.control_sizes[from..].to_vec(),
            noise_laws: self.noise_laws[from..].to_vec(),
            dynamics: self.dynamics[from..].to_vec(),
            stage_costs: self.stage_costs[from..].to_vec(),
            final_cost: self.final_cost.clone(),
        })
    }

    /// Converts every real to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FiniteSocProblem<U> {
        let conv = |v: &[T]| v.iter().map(|&c| U::lit(c.as_f64())).collect::<Vec<_>>();
        FiniteSocProblem {
            state_sizes: self.state_sizes.clone(),
            control_sizes: self.control_sizes.clone(),
            noise_laws: self.noise_laws.iter().map(|l| conv(l)).collect(),
            dynamics: self.dynamics.clone(),
            stage_costs: self.stage_costs.iter().map(|c| conv(c)).collect(),
            final_cost: conv(&self.final_cost),
        }
    }

    /// Reports every violated structural invariant. An empty report means
    /// the problem is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let tol = T::lit(T::LAW_TOL);
        for (t, law) in self.noise_laws.iter().enumerate() {
            for (w, &p) in law.iter().enumerate() {
                if !p.is_finite() || p < T::zero() {
                    violations.push(Violation::NegativeProbability {
                        stage: t,
                        noise: w,
                        probability: p.as_f64(),
                    });
                }
            }
            let sum: T = law.iter().copied().sum();
            if !sum.is_finite() || (sum - T::one()).abs() > tol {
                violations.push(Violation::LawNotNormalized {
                    stage: t,
                    sum: sum.as_f64(),
                });
            }
        }
        for t in 0..self.horizon() {
            let bound = self.state_sizes[t + 1];
            for x in 0..self.state_sizes[t] {
                for u in 0..self.control_sizes[t] {
                    for w in 0..self.noise_size(t) {
                        let next = self.next_state(t, x, u, w);
                        if next >= bound {
                            violations.push(Violation::NextStateOutOfRange {
                                stage: t,
                                state: x,
                                control: u,
                                noise: w,
                                next,
                                bound,
                            });
                        }
                    }
                }
            }
            if self.stage_costs[t].iter().any(|c| !c.is_finite()) {
                violations.push(Violation::NonFiniteCost { stage: Some(t) });
            }
        }
        if self.final_cost.iter().any(|c| !c.is_finite()) {
            violations.push(Violation::NonFiniteCost { stage: None });
        }
        ValidationReport { violations }
    }

    pub fn check(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(report))
        }
    }

    pub(crate) fn check_feedback(&self, t: usize, feedback: &[usize]) -> Result<()> {
        if t >= self.horizon() {
            return Err(Error::IndexOutOfRange {
                what: "stage",
                index: t,
                size: self.horizon(),
            });
        }
        if feedback.len() != self.state_sizes[t] {
            return Err(Error::DimensionMismatch {
                what: "feedback",
                expected: self.state_sizes[t],
                found: feedback.len(),
            });
        }
        if let Some(&u) = feedback.iter().find(|&&u| u >= self.control_sizes[t]) {
            return Err(Error::IndexOutOfRange {
                what: "control",
                index: u,
                size: self.control_sizes[t],
            });
        }
        Ok(())
    }

    /// `E_w[L_t(x, u, w) + next(f_t(x, u, w))]`.
    pub fn q_value(&self, t: usize, x: usize, u: usize, next: &[T]) -> T {
        self.noise_laws[t]
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (w, &p)| {
                acc + p * (self.stage_cost(t, x, u, w) + next[self.next_state(t, x, u, w)])
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    LawNotNormalized {
        stage: usize,
        sum: f64,
    },
    NegativeProbability {
        stage: usize,
        noise: usize,
        probability: f64,
    },
    NextStateOutOfRange {
        stage: usize,
        state: usize,
        control: usize,
        noise: usize,
        next: usize,
        bound: usize,
    },
    NonFiniteCost {
        stage: Option<usize>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LawNotNormalized { stage, sum } => {
                write!(f, "stage {stage}: noise law sums to {sum}")
            }
            Violation::NegativeProbability {
                stage,
                noise,
                probability,
            } => write!(
                f,
                "stage {stage}: noise {noise} has invalid probability {probability}"
            ),
            Violation::NextStateOutOfRange {
                stage,
                state,
                control,
                noise,
                next,
                bound,
            } => write!(
                f,
                "stage {stage}: out-of-range next state {next} (state space has {bound}) \
                 at state {state}, control {control}, noise {noise}"
            ),
            Violation::NonFiniteCost { stage: Some(t) } => {
                write!(f, "stage {t}: non-finite stage cost")
            }
            Violation::NonFiniteCost { stage: None } => write!(f, "non-finite final cost"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let lines: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// A deterministic Markov feedback: `feedback[t][x]` is the control applied
/// in state `x` at stage `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Policy {
    feedback: Vec<Vec<usize>>,
}

impl Policy {
    pub fn new<T: Scalar>(
        problem: &FiniteSocProblem<T>,
        feedback: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if feedback.len() != problem.horizon() {
            return Err(Error::DimensionMismatch {
                what: "policy stages",
                expected: problem.horizon(),
                found: feedback.len(),
            });
        }
        for (t, stage) in feedback.iter().enumerate() {
            problem.check_feedback(t, stage)?;
        }
        Ok(Self { feedback })
    }

    pub(crate) fn from_feedback(feedback: Vec<Vec<usize>>) -> Self {
        Self { feedback }
    }

    /// Applies control `u` everywhere.
    pub fn constant<T: Scalar>(problem: &FiniteSocProblem<T>, u: usize) -> Result<Self> {
        let feedback = problem.state_sizes[..problem.horizon()]
            .iter()
            .map(|&nx| vec![u; nx])
            .collect();
        Self::new(problem, feedback)
    }

    pub fn stage(&self, t: usize) -> &[usize] {
        &self.feedback[t]
    }

    pub fn stages(&self) -> &[Vec<usize>] {
        &self.feedback
    }

    pub fn horizon(&self) -> usize {
        self.feedback.len()
    }

    /// Feedbacks from stage `from` onwards, matching
    /// [`FiniteSocProblem::truncate`].
    pub fn tail(&self, from: usize) -> Policy {
        Policy {
            feedback: self.feedback[from..].to_vec(),
        }
    }

    pub(crate) fn check_against<T: Scalar>(&self, problem: &FiniteSocProblem<T>) -> Result<()> {
        if self.feedback.len() != problem.horizon() {
            return Err(Error::DimensionMismatch {
                what: "policy stages",
                expected: problem.horizon(),
                found: self.feedback.len(),
            });
        }
        for (t, stage) in self.feedback.iter().enumerate() {
            problem.check_feedback(t, stage)?;
        }
        Ok(())
    }
}

/// Per-stage cost-to-go table, `values[t][x]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostToGo<T> {
    values: Vec<Vec<T>>,
}

impl<T: Scalar> CostToGo<T> {
    pub fn new(values: Vec<Vec<T>>) -> Self {
        Self { values }
    }

    pub fn at(&self, t: usize) -> &[T] {
        &self.values[t]
    }

    pub fn stages(&self) -> &[Vec<T>] {
        &self.values
    }
}

/// Mixed-radix indexing of all feedback maps `0..nx -> 0..nu` at one stage,
/// in lexicographic order (state 0 is the most significant digit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackSpace {
    states: usize,
    controls: usize,
    count: usize,
}

impl FeedbackSpace {
    pub fn new(states: usize, controls: usize, cap: u128) -> Result<Self> {
        let count = checked_pow(controls as u128, states, cap).ok_or(Error::CapExceeded {
            what: "feedback map",
            count: saturating_pow(controls as u128, states),
            cap,
        })?;
        Ok(Self {
            states,
            controls,
            count: count as usize,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.states];
        for slot in out.iter_mut().rev() {
            *slot = index % self.controls;
            index /= self.controls;
        }
        out
    }

    pub fn encode(&self, feedback: &[usize]) -> usize {
        feedback.iter().fold(0, |acc, &u| acc * self.controls + u)
    }
}

fn saturating_pow(base: u128, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base))
}

fn checked_pow(base: u128, exp: usize, cap: u128) -> Option<u128> {
    let mut acc = 1u128;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

pub const DEFAULT_POLICY_CAP: u128 = 10_000_000;

/// Number of deterministic Markov policies, `prod_t nu[t]^nx[t]`, saturating.
pub fn policy_count<T: Scalar>(problem: &FiniteSocProblem<T>) -> u128 {
    (0..problem.horizon()).fold(1u128, |acc, t| {
        acc.saturating_mul(saturating_pow(
            problem.control_size(t) as u128,
            problem.state_size(t),
        ))
    })
}

/// Streams every Markov policy once, in lexicographic order over
/// `(stage, state, control)`.
pub fn enumerate_policies<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    cap: u128,
) -> Result<PolicyEnumerator> {
    let count = policy_count(problem);
    if count > cap {
        return Err(Error::CapExceeded {
            what: "policy",
            count,
            cap,
        });
    }
    let digits = (0..problem.horizon())
        .map(|t| vec![0; problem.state_size(t)])
        .collect();
    Ok(PolicyEnumerator {
        radices: problem.control_sizes.clone(),
        digits,
        remaining: count,
    })
}

#[derive(Debug)]
pub struct PolicyEnumerator {
    radices: Vec<usize>,
    digits: Vec<Vec<usize>>,
    remaining: u128,
}

impl PolicyEnumerator {
    fn advance(&mut self) {
        for (t, stage) in self.digits.iter_mut().enumerate().rev() {
            for d in stage.iter_mut().rev() {
                *d += 1;
                if *d < self.radices[t] {
                    return;
                }
                *d = 0;
            }
        }
    }
}

impl Iterator for PolicyEnumerator {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        if self.remaining == 0 {
            return None;
        }
        let policy = Policy {
            feedback: self.digits.clone(),
        };
        self.remaining -= 1;
        if self.remaining > 0 {
            self.advance();
        }
        Some(policy)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

/// Backward induction. `value[N] = K`; `value[t][x]` is the smallest
/// expected cost-to-go, attained by `feedback[t][x]` (lowest control index
/// among those within the tie tolerance of the minimum).
pub fn solve_dp<T: Scalar>(problem: &FiniteSocProblem<T>) -> Result<(CostToGo<T>, Policy)> {
    problem.check()?;
    let horizon = problem.horizon();
    let tie = T::lit(T::TIE_TOL);
    let mut values = vec![Vec::new(); horizon + 1];
    let mut feedback = vec![Vec::new(); horizon];
    values[horizon] = problem.final_cost.clone();
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        let mut vt = Vec::with_capacity(problem.state_size(t));
        let mut ft = Vec::with_capacity(problem.state_size(t));
        for x in 0..problem.state_size(t) {
            let q: Vec<T> = (0..problem.control_size(t))
                .map(|u| problem.q_value(t, x, u, next))
                .collect();
            let (u, v) = tie_broken_argmin(&q, tie);
            vt.push(v);
            ft.push(u);
        }
        head[t] = vt;
        feedback[t] = ft;
    }
    Ok((CostToGo { values }, Policy { feedback }))
}

/// Smallest index whose value lies within `tie` of the minimum.
pub(crate) fn tie_broken_argmin<T: Scalar>(values: &[T], tie: T) -> (usize, T) {
    let min = values.iter().copied().fold(T::infinity(), T::min);
    let idx = values
        .iter()
        .position(|&v| v <= min + tie)
        .expect("nonempty candidate set");
    (idx, values[idx])
}

/// Exact expected total cost of `policy` started from `initial`, obtained by
/// propagating the sparse support of the state law stage by stage and
/// charging every realized transition.
pub fn evaluate_policy_exact<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    policy: &Policy,
    initial: &Law<T>,
) -> Result<T> {
    policy.check_against(problem)?;
    if initial.len() != problem.state_size(0) {
        return Err(Error::DimensionMismatch {
            what: "initial law",
            expected: problem.state_size(0),
            found: initial.len(),
        });
    }
    let mut support: BTreeMap<usize, T> = initial
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > T::zero())
        .map(|(x, &p)| (x, p))
        .collect();
    let mut total = T::zero();
    for t in 0..problem.horizon() {
        let mut next: BTreeMap<usize, T> = BTreeMap::new();
        for (&x, &p) in &support {
            let u = policy.feedback[t][x];
            for (w, &pw) in problem.noise_law(t).iter().enumerate() {
                let mass = p * pw;
                if mass == T::zero() {
                    continue;
                }
                total = total + mass * problem.stage_cost(t, x, u, w);
                let slot = next
                    .entry(problem.next_state(t, x, u, w))
                    .or_insert_with(T::zero);
                *slot = *slot + mass;
            }
        }
        support = next;
    }
    for (&x, &p) in &support {
        total = total + p * problem.final_cost[x];
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<T> {
    pub states: Vec<usize>,
    pub controls: Vec<usize>,
    pub noises: Vec<usize>,
    pub cost: T,
}

impl<T: Scalar> Trajectory<T> {
    /// Sum of stage costs plus final cost, recomputed from the recorded path.
    pub fn recompute_cost(&self, problem: &FiniteSocProblem<T>) -> T {
        let running = (0..self.controls.len()).fold(T::zero(), |acc, t| {
            acc + problem.stage_cost(t, self.states[t], self.controls[t], self.noises[t])
        });
        running + problem.final_cost[*self.states.last().expect("nonempty path")]
    }

    /// Whether the recorded states follow the dynamics under the recorded
    /// controls and noises.
    pub fn obeys_dynamics(&self, problem: &FiniteSocProblem<T>) -> bool {
        (0..self.controls.len()).all(|t| {
            self.states[t + 1]
                == problem.next_state(t, self.states[t], self.controls[t], self.noises[t])
        })
    }
}

/// Runs `policy` from `initial_state` under the given noise indices, one per
/// transition.
pub fn simulate<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    policy: &Policy,
    initial_state: usize,
    noise_draws: &[usize],
) -> Result<Trajectory<T>> {
    policy.check_against(problem)?;
    if initial_state >= problem.state_size(0) {
        return Err(Error::IndexOutOfRange {
            what: "initial state",
            index: initial_state,
            size: problem.state_size(0),
        });
    }
    if noise_draws.len() != problem.horizon() {
        return Err(Error::DimensionMismatch {
            what: "noise draws",
            expected: problem.horizon(),
            found: noise_draws.len(),
        });
    }
    let mut states = Vec::with_capacity(problem.horizon() + 1);
    let mut controls = Vec::with_capacity(problem.horizon());
    let mut cost = T::zero();
    let mut x = initial_state;
    states.push(x);
    for (t, &w) in noise_draws.iter().enumerate() {
        if w >= problem.noise_size(t) {
            return Err(Error::IndexOutOfRange {
                what: "noise",
                index: w,
                size: problem.noise_size(t),
            });
        }
        let u = policy.feedback[t][x];
        cost = cost + problem.stage_cost(t, x, u, w);
        x = problem.next_state(t, x, u, w);
        controls.push(u);
        states.push(x);
    }
    cost = cost + problem.final_cost[x];
    Ok(Trajectory {
        states,
        controls,
        noises: noise_draws.to_vec(),
        cost,
    })
}

/// Draws one independent noise index per transition from the stage laws.
pub fn sample_noises<T: Scalar, R: Rng + ?Sized>(
    problem: &FiniteSocProblem<T>,
    rng: &mut R,
) -> Vec<usize> {
    (0..problem.horizon())
        .map(|t| {
            let weights: Vec<f64> = problem.noise_law(t).iter().map(|p| p.as_f64()).collect();
            WeightedIndex::new(&weights)
                .expect("validated noise law")
                .sample(rng)
        })
        .collect()
}

pub(crate) fn ensure_deterministic<T: Scalar>(problem: &FiniteSocProblem<T>) -> Result<()> {
    match (0..problem.horizon()).find(|&t| problem.noise_size(t) != 1) {
        Some(t) => Err(Error::NotDeterministic {
            stage: t,
            size: problem.noise_size(t),
        }),
        None => Ok(()),
    }
}

/// Optimal open-loop control sequence of a noise-free problem from
/// `initial_state`, read forward from the DP feedback, with its cost.
pub fn solve_deterministic<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    initial_state: usize,
) -> Result<(Vec<usize>, T)> {
    ensure_deterministic(problem)?;
    if initial_state >= problem.state_size(0) {
        return Err(Error::IndexOutOfRange {
            what: "initial state",
            index: initial_state,
            size: problem.state_size(0),
        });
    }
    let (values, policy) = solve_dp(problem)?;
    let mut controls = Vec::with_capacity(problem.horizon());
    let mut x = initial_state;
    for t in 0..problem.horizon() {
        let u = policy.feedback[t][x];
        controls.push(u);
        x = problem.next_state(t, x, u, 0);
    }
    Ok((controls, values.at(0)[initial_state]))
}

/// Cost of applying an open-loop control sequence to a noise-free problem.
pub fn open_loop_cost<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    initial_state: usize,
    controls: &[usize],
) -> Result<T> {
    ensure_deterministic(problem)?;
    if controls.len() != problem.horizon() {
        return Err(Error::DimensionMismatch {
            what: "open-loop controls",
            expected: problem.horizon(),
            found: controls.len(),
        });
    }
    if initial_state >= problem.state_size(0) {
        return Err(Error::IndexOutOfRange {
            what: "initial state",
            index: initial_state,
            size: problem.state_size(0),
        });
    }
    let mut x = initial_state;
    let mut cost = T::zero();
    for (t, &u) in controls.iter().enumerate() {
        if u >= problem.control_size(t) {
            return Err(Error::IndexOutOfRange {
                what: "control",
                index: u,
                size: problem.control_size(t),
            });
        }
        cost = cost + problem.stage_cost(t, x, u, 0);
        x = problem.next_state(t, x, u, 0);
    }
    Ok(cost + problem.final_cost[x])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stage(costs: [f64; 2]) -> FiniteSocProblem<f64> {
        FiniteSocProblem::from_fn(
            vec![1, 1],
            vec![2],
            vec![vec![1.0]],
            |_, _, _, _| 0,
            move |_, _, u, _| costs[u],
            |_| 0.0,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_single_stage_is_valid() {
        let p = FiniteSocProblem::from_fn(
            vec![1, 1],
            vec![1],
            vec![vec![0.5, 0.5]],
            |_, _, _, _| 0,
            |_, _, _, _| 1.0,
            |_| 0.0,
        )
        .unwrap();
        assert!(p.validate().is_valid());
    }

    #[test]
    fn unnormalized_law_is_reported() {
        let p = FiniteSocProblem::from_fn(
            vec![1, 1],
            vec![1],
            vec![vec![0.6, 0.6]],
            |_, _, _, _| 0,
            |_, _, _, _| 1.0,
            |_| 0.0,
        )
        .unwrap();
        let report = p.validate();
        assert_eq!(
            report.violations,
            vec![Violation::LawNotNormalized { stage: 0, sum: 1.2 }]
        );
        assert!(report.to_string().contains("law sums to 1.2"));
    }

    #[test]
    fn out_of_range_next_state_is_reported() {
        let p = FiniteSocProblem::from_fn(
            vec![2, 2],
            vec![1],
            vec![vec![1.0]],
            |_, x, _, _| if x == 1 { 2 } else { 0 },
            |_, _, _, _| 0.0,
            |_| 0.0,
        )
        .unwrap();
        let report = p.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.to_string().contains("out-of-range next state"));
        assert!(matches!(solve_dp(&p), Err(Error::Invalid(_))));
    }

    #[test]
    fn shape_errors_are_rejected() {
        assert!(matches!(
            FiniteSocProblem::<f64>::new(vec![1], vec![], vec![], vec![], vec![], vec![0.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            FiniteSocProblem::<f64>::new(
                vec![1, 1],
                vec![1],
                vec![vec![1.0]],
                vec![vec![0, 0]],
                vec![vec![0.0]],
                vec![0.0]
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn one_step_argmin() {
        let (v, pol) = solve_dp(&one_stage([3.0, 1.0])).unwrap();
        assert_eq!(v.at(0), &[1.0]);
        assert_eq!(pol.stage(0), &[1]);
    }

    #[test]
    fn zero_costs_tie_break_to_first_control() {
        let p = FiniteSocProblem::from_fn(
            vec![2, 3, 2],
            vec![3, 2],
            vec![vec![0.5, 0.5], vec![1.0]],
            |_, x, u, w| (x + u + w) % 2,
            |_, _, _, _| 0.0,
            |_| 0.0,
        )
        .unwrap();
        let (v, pol) = solve_dp(&p).unwrap();
        assert!(v.stages().iter().flatten().all(|&c| c == 0.0));
        assert!(pol.stages().iter().flatten().all(|&u| u == 0));
    }

    #[test]
    fn enumeration_counts() {
        let mk = |nx: usize, nu: usize, n: usize| {
            FiniteSocProblem::from_fn(
                vec![nx; n + 1],
                vec![nu; n],
                vec![vec![1.0]; n],
                |_, _, _, _| 0,
                |_, _, _, _| 0.0,
                |_| 0.0,
            )
            .unwrap()
        };
        let count =
            |p: &FiniteSocProblem<f64>| enumerate_policies(p, DEFAULT_POLICY_CAP).unwrap().count();
        assert_eq!(count(&mk(1, 2, 1)), 2);
        assert_eq!(count(&mk(2, 2, 2)), 16);
        assert_eq!(count(&mk(3, 2, 3)), 512);
        assert!(matches!(
            enumerate_policies(&mk(3, 2, 3), 100),
            Err(Error::CapExceeded { count: 512, .. })
        ));
    }

    #[test]
    fn enumeration_is_lexicographic_and_exhaustive() {
        let p = FiniteSocProblem::from_fn(
            vec![2, 1, 1],
            vec![2, 3],
            vec![vec![1.0], vec![1.0]],
            |_, _, _, _| 0,
            |_, _, _, _| 0.0,
            |_| 0.0,
        )
        .unwrap();
        let all: Vec<Vec<usize>> = enumerate_policies(&p, 1000)
            .unwrap()
            .map(|pol| pol.stages().concat())
            .collect();
        assert_eq!(all.len(), 12);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 0, 1]);
        assert_eq!(all[3], vec![0, 1, 0]);
        assert_eq!(all[11], vec![1, 1, 2]);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, all);
    }

    #[test]
    fn feedback_space_roundtrip() {
        let fs = FeedbackSpace::new(3, 2, 1 << 20).unwrap();
        assert_eq!(fs.count(), 8);
        assert_eq!(fs.decode(0), vec![0, 0, 0]);
        assert_eq!(fs.decode(1), vec![0, 0, 1]);
        assert_eq!(fs.decode(6), vec![1, 1, 0]);
        for i in 0..8 {
            assert_eq!(fs.encode(&fs.decode(i)), i);
        }
        assert!(FeedbackSpace::new(30, 4, 1_000_000).is_err());
    }

    #[test]
    fn single_path_cost() {
        // L = 2.5 at (x0, u0), K(f(x0, u0)) = 1.5
        let p = FiniteSocProblem::from_fn(
            vec![1, 2],
            vec![1],
            vec![vec![1.0]],
            |_, _, _, _| 1,
            |_, _, _, _| 2.5,
            |x| [0.0, 1.5][x],
        )
        .unwrap();
        let pol = Policy::constant(&p, 0).unwrap();
        let mu = Law::dirac(0, 1, 0).unwrap();
        assert_eq!(evaluate_policy_exact(&p, &pol, &mu).unwrap(), 4.0);
        let traj = simulate(&p, &pol, 0, &[0]).unwrap();
        assert_eq!(traj.cost, 4.0);
        assert_eq!(traj.states, vec![0, 1]);
        assert!(traj.obeys_dynamics(&p));
    }

    #[test]
    fn simulate_rejects_bad_indices() {
        let p = one_stage([1.0, 2.0]);
        let pol = Policy::constant(&p, 0).unwrap();
        assert!(simulate(&p, &pol, 1, &[0]).is_err());
        assert!(simulate(&p, &pol, 0, &[1]).is_err());
        assert!(simulate(&p, &pol, 0, &[]).is_err());
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let p = one_stage([1.0, 2.0]);
        let pol = Policy::constant(&p, 0).unwrap();
        let mu = Law::dirac(0, 2, 0).unwrap();
        assert!(matches!(
            evaluate_policy_exact(&p, &pol, &mu),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_readout() {
        let (controls, cost) = solve_deterministic(&one_stage([3.0, 1.0]), 0).unwrap();
        assert_eq!(controls, vec![1]);
        assert_eq!(cost, 1.0);
    }

    #[test]
    fn deterministic_solver_rejects_noise() {
        let p = FiniteSocProblem::from_fn(
            vec![1, 1],
            vec![1],
            vec![vec![0.5, 0.5]],
            |_, _, _, _| 0,
            |_, _, _, _| 0.0,
            |_| 0.0,
        )
        .unwrap();
        assert!(matches!(
            solve_deterministic(&p, 0),
            Err(Error::NotDeterministic { stage: 0, size: 2 })
        ));
    }

    #[test]
    fn truncation_keeps_final_time() {
        let p = FiniteSocProblem::from_fn(
            vec![1, 2, 3],
            vec![2, 2],
            vec![vec![1.0], vec![0.5, 0.5]],
            |t, _, u, w| if t == 0 { u } else { (u + w) % 3 },
            |_, _, u, _| u as f64,
            |x| x as f64,
        )
        .unwrap();
        let sub = p.truncate(1).unwrap();
        assert_eq!(sub.horizon(), 1);
        assert_eq!(sub.state_sizes(), &[2, 3]);
        assert!(p.truncate(2).is_err());
    }
}
