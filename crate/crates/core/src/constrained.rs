//! Final expectation constraints `E[g(x_N)] <= a` and their exact solution
//! by dynamic programming over probability laws.
//!
//! Once the final law enters the objective through the feasibility test,
//! the optimal feedback can no longer be chosen state by state: it depends
//! on the whole law `mu_t`. The value function is therefore defined on laws,
//!
//!   V_N(mu) = <K, mu>             if <g, mu> <= a, INFEASIBLE otherwise,
//!   V_t(mu) = min_phi <Lambda_t^phi, mu> + V_{t+1}((A_t^phi)* mu).
//!
//! Over the whole simplex this recursion is not computable. Starting from a
//! fixed initial law with finitely many feedback maps per stage, though,
//! only finitely many laws are ever reached, and the recursion is solved
//! exactly on that graph.

use std::collections::HashMap;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fokker_planck::{pairing, push_forward, stage_cost_functional, CostFunction, Law};
use crate::mdp::{tie_broken_argmin, FeedbackSpace, FiniteSocProblem, Policy};
use crate::scalar::Scalar;

/// `E[g(x_N)] <= level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationConstraint<T> {
    g: Vec<T>,
    level: T,
}

impl<T: Scalar> ExpectationConstraint<T> {
    pub fn new(g: Vec<T>, level: T) -> Result<Self> {
        if g.iter().any(|v| !v.is_finite()) || !level.is_finite() {
            return Err(Error::NonFinite("expectation constraint"));
        }
        Ok(Self { g, level })
    }

    pub fn g(&self) -> &[T] {
        &self.g
    }

    pub fn level(&self) -> T {
        self.level
    }

    pub fn with_level(&self, level: T) -> Result<Self> {
        Self::new(self.g.clone(), level)
    }

    /// `<g, mu>`.
    pub fn expectation(&self, mu: &Law<T>) -> T {
        self.g
            .iter()
            .zip(mu.weights())
            .fold(T::zero(), |acc, (&g, &p)| acc + g * p)
    }

    pub fn is_satisfied(&self, mu: &Law<T>, tol: T) -> bool {
        self.expectation(mu) <= self.level + tol
    }

    /// Largest entry of `g`; any level at or above it makes the constraint
    /// vacuous.
    pub fn max_g(&self) -> T {
        self.g.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// `P(h(x_N) >= b) <= pi`, rewritten as `E[1{h(x_N) >= b}] <= pi`.
pub fn make_chance_constraint<T: Scalar>(h: &[T], b: T, pi: T) -> Result<ExpectationConstraint<T>> {
    if !(pi >= T::zero() && pi <= T::one()) {
        return Err(Error::InvalidProbability(pi.to_f64().unwrap_or(f64::NAN)));
    }
    let g = h
        .iter()
        .map(|&v| if v >= b { T::one() } else { T::zero() })
        .collect();
    ExpectationConstraint::new(g, pi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedProblem<T> {
    base: FiniteSocProblem<T>,
    constraint: ExpectationConstraint<T>,
}

impl<T: Scalar> ConstrainedProblem<T> {
    pub fn new(base: FiniteSocProblem<T>, constraint: ExpectationConstraint<T>) -> Result<Self> {
        let n_final = base.state_size(base.horizon());
        if constraint.g.len() != n_final {
            return Err(Error::DimensionMismatch {
                what: "constraint function",
                expected: n_final,
                found: constraint.g.len(),
            });
        }
        Ok(Self { base, constraint })
    }

    pub fn base(&self) -> &FiniteSocProblem<T> {
        &self.base
    }

    pub fn constraint(&self) -> &ExpectationConstraint<T> {
        &self.constraint
    }

    /// Same problem with another constraint level.
    pub fn with_level(&self, level: T) -> Result<Self> {
        Ok(Self {
            base: self.base.clone(),
            constraint: self.constraint.with_level(level)?,
        })
    }

    /// The subsequent problem from stage `from`, keeping the same level.
    pub fn truncate(&self, from: usize) -> Result<Self> {
        Ok(Self {
            base: self.base.truncate(from)?,
            constraint: self.constraint.clone(),
        })
    }
}

/// One stagewise event `g_t(x_t) >= b_t` of a joint chance constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointThreshold<T> {
    pub g: Vec<T>,
    pub b: T,
}

/// Index of the augmented state `(x, y)` with `y` in `{0, 1}`.
pub fn augmented_state(x: usize, y: usize) -> usize {
    2 * x + y
}

/// Inverse of [`augmented_state`].
pub fn split_augmented(index: usize) -> (usize, usize) {
    (index / 2, index % 2)
}

/// Rewrites `P(g_t(x_t) >= b_t for all t = 1..N) <= pi` as a final
/// expectation constraint on a binary survival flag,
/// `y_{t+1} = y_t * 1{g_{t+1}(x_{t+1}) >= b_{t+1}}`, `E[y_N] <= pi`.
///
/// From stage 1 on, states are pairs `(x, y)` indexed by
/// [`augmented_state`]. Stage 0 keeps the original space and carries the
/// implicit flag `y_0 = 1`, so initial laws are unchanged. Costs ignore `y`.
pub fn augment_joint_chance<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    thresholds: &[JointThreshold<T>],
    pi: T,
) -> Result<ConstrainedProblem<T>> {
    if !(pi >= T::zero() && pi <= T::one()) {
        return Err(Error::InvalidProbability(pi.to_f64().unwrap_or(f64::NAN)));
    }
    let horizon = problem.horizon();
    if thresholds.len() != horizon {
        return Err(Error::DimensionMismatch {
            what: "joint chance thresholds",
            expected: horizon,
            found: thresholds.len(),
        });
    }
    for (k, th) in thresholds.iter().enumerate() {
        if th.g.len() != problem.state_size(k + 1) {
            return Err(Error::DimensionMismatch {
                what: "joint chance threshold function",
                expected: problem.state_size(k + 1),
                found: th.g.len(),
            });
        }
    }
    let event = |t: usize, x: usize| -> usize {
        let th = &thresholds[t - 1];
        usize::from(th.g[x] >= th.b)
    };
    let lift = |t: usize, s: usize| -> (usize, usize) {
        if t == 0 {
            (s, 1)
        } else {
            split_augmented(s)
        }
    };
    let sizes: Vec<usize> = (0..=horizon)
        .map(|t| {
            if t == 0 {
                problem.state_size(0)
            } else {
                2 * problem.state_size(t)
            }
        })
        .collect();
    let noise_laws = (0..horizon)
        .map(|t| problem.noise_law(t).to_vec())
        .collect();
    let augmented = FiniteSocProblem::from_fn(
        sizes,
        problem.control_sizes().to_vec(),
        noise_laws,
        |t, s, u, w| {
            let (x, y) = lift(t, s);
            let next = problem.next_state(t, x, u, w);
            augmented_state(next, y * event(t + 1, next))
        },
        |t, s, u, w| problem.stage_cost(t, lift(t, s).0, u, w),
        |s| problem.final_cost()[split_augmented(s).0],
    )?;
    let g = (0..2 * problem.state_size(horizon))
        .map(|s| T::lit(split_augmented(s).1 as f64))
        .collect();
    ConstrainedProblem::new(augmented, ExpectationConstraint::new(g, pi)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstrainedOptions {
    /// Maximum number of reachable laws, and of law transitions evaluated.
    pub cap: u128,
    /// Rounding step for law de-duplication.
    pub quantum: f64,
    /// Slack on `<g, mu_N> <= a`.
    pub feasibility_tol: f64,
    /// Argmin grouping tolerance over feedback maps.
    pub tie_tol: f64,
}

pub const DEFAULT_LAW_CAP: u128 = 1_000_000;

impl ConstrainedOptions {
    pub fn for_scalar<T: Scalar>() -> Self {
        Self {
            cap: DEFAULT_LAW_CAP,
            quantum: T::LAW_QUANTUM,
            feasibility_tol: T::FEASIBILITY_TOL,
            tie_tol: T::TIE_TOL,
        }
    }
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        Self::for_scalar::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LawEdge {
    pub parent: usize,
    pub feedback: usize,
}

#[derive(Debug, Clone)]
pub struct LawLayer<T> {
    laws: Vec<Law<T>>,
    /// Edge through which each law was first discovered.
    origins: Vec<Option<LawEdge>>,
    /// `children[i][f]`: index in the next layer of the image of law `i`
    /// under feedback `f`. Empty at the final stage.
    children: Vec<Vec<usize>>,
    index: HashMap<Vec<i64>, usize>,
}

impl<T: Scalar> LawLayer<T> {
    fn new() -> Self {
        Self {
            laws: Vec::new(),
            origins: Vec::new(),
            children: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, law: Law<T>, origin: Option<LawEdge>, quantum: f64) -> usize {
        let key = law.quantized_key(quantum);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.laws.len();
        self.index.insert(key, i);
        self.laws.push(law);
        self.origins.push(origin);
        i
    }

    pub fn laws(&self) -> &[Law<T>] {
        &self.laws
    }

    pub fn origins(&self) -> &[Option<LawEdge>] {
        &self.origins
    }

    pub fn children(&self, law: usize) -> &[usize] {
        &self.children[law]
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }
}

/// Every law reachable from an initial law, stage by stage, with the
/// transition taken under each feedback map.
#[derive(Debug, Clone)]
pub struct LawGraph<T> {
    layers: Vec<LawLayer<T>>,
    feedbacks: Vec<FeedbackSpace>,
    quantum: f64,
}

impl<T: Scalar> LawGraph<T> {
    pub fn layers(&self) -> &[LawLayer<T>] {
        &self.layers
    }

    pub fn layer(&self, t: usize) -> &LawLayer<T> {
        &self.layers[t]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.layers.iter().map(LawLayer::len).collect()
    }

    pub fn feedback_space(&self, t: usize) -> FeedbackSpace {
        self.feedbacks[t]
    }

    /// Index of `law` in layer `t`, up to quantization.
    pub fn find(&self, t: usize, law: &Law<T>) -> Option<usize> {
        self.layers
            .get(t)?
            .index
            .get(&law.quantized_key(self.quantum))
            .copied()
    }
}

/// Forward reachability from `mu0` under every feedback map at every stage.
pub fn reachable_laws<T: Scalar>(
    problem: &ConstrainedProblem<T>,
    mu0: &Law<T>,
    options: &ConstrainedOptions,
) -> Result<LawGraph<T>> {
    let base = &problem.base;
    base.check()?;
    if mu0.stage() != 0 || mu0.len() != base.state_size(0) {
        return Err(Error::DimensionMismatch {
            what: "initial law",
            expected: base.state_size(0),
            found: mu0.len(),
        });
    }
    let horizon = base.horizon();
    let feedbacks = (0..horizon)
        .map(|t| FeedbackSpace::new(base.state_size(t), base.control_size(t), options.cap))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(horizon + 1);
    let mut root = LawLayer::new();
    root.insert(mu0.clone(), None, options.quantum);
    layers.push(root);
    let mut total_laws: u128 = 1;
    let mut transitions: u128 = 0;
    for t in 0..horizon {
        let space = feedbacks[t];
        let maps: Vec<Vec<usize>> = (0..space.count()).map(|f| space.decode(f)).collect();
        transitions += layers[t].len() as u128 * maps.len() as u128;
        if transitions > options.cap {
            return Err(Error::CapExceeded {
                what: "law transition",
                count: transitions,
                cap: options.cap,
            });
        }
        let mut next = LawLayer::new();
        let mut children = Vec::with_capacity(layers[t].len());
        for (i, law) in layers[t].laws.iter().enumerate() {
            let mut row = Vec::with_capacity(maps.len());
            for (f, map) in maps.iter().enumerate() {
                let image = push_forward(base, t, map, law)?;
                let before = next.len();
                let j = next.insert(
                    image,
                    Some(LawEdge {
                        parent: i,
                        feedback: f,
                    }),
                    options.quantum,
                );
                if next.len() > before {
                    total_laws += 1;
                    if total_laws > options.cap {
                        return Err(Error::CapExceeded {
                            what: "reachable law",
                            count: total_laws,
                            cap: options.cap,
                        });
                    }
                }
                row.push(j);
            }
            children.push(row);
        }
        layers[t].children = children;
        layers.push(next);
    }
    Ok(LawGraph {
        layers,
        feedbacks,
        quantum: options.quantum,
    })
}

/// Optimal value of a constrained problem, or the explicit infeasibility
/// verdict standing for the `+inf` branch of the terminal value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome<T> {
    Value(T),
    Infeasible,
}

impl<T: Scalar> Outcome<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::Value(_))
    }

    pub fn value(&self) -> Option<T> {
        match *self {
            Outcome::Value(v) => Some(v),
            Outcome::Infeasible => None,
        }
    }

    /// The value on the extended real line (`Infeasible` maps to `+inf`).
    pub fn extended(&self) -> T {
        self.value().unwrap_or_else(T::infinity)
    }
}

impl<T: Serialize> Serialize for Outcome<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Outcome::Value(v) => v.serialize(s),
            Outcome::Infeasible => s.serialize_str("INFEASIBLE"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LawPolicyEntry<T> {
    pub law: Law<T>,
    /// `None` where no feedback sequence from this law meets the constraint.
    pub feedback: Option<Vec<usize>>,
}

/// Feedback maps indexed by `(stage, reachable law)`.
#[derive(Debug, Clone, Serialize)]
pub struct LawPolicy<T> {
    stages: Vec<Vec<LawPolicyEntry<T>>>,
    #[serde(skip)]
    index: Vec<HashMap<Vec<i64>, usize>>,
    #[serde(skip)]
    quantum: f64,
}

impl<T: Scalar> LawPolicy<T> {
    pub fn stage(&self, t: usize) -> &[LawPolicyEntry<T>] {
        &self.stages[t]
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn feedback_for(&self, t: usize, law: &Law<T>) -> Option<&[usize]> {
        let i = *self.index.get(t)?.get(&law.quantized_key(self.quantum))?;
        self.stages[t][i].feedback.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution<T> {
    value: Outcome<T>,
    law_policy: LawPolicy<T>,
    /// `values[t][i]` is `V_t` at the `i`-th reachable law of stage `t`.
    values: Vec<Vec<Outcome<T>>>,
    choices: Vec<Vec<Option<usize>>>,
    graph: LawGraph<T>,
}

impl<T: Scalar> ConstrainedSolution<T> {
    pub fn value(&self) -> Outcome<T> {
        self.value
    }

    pub fn law_policy(&self) -> &LawPolicy<T> {
        &self.law_policy
    }

    pub fn values(&self) -> &[Vec<Outcome<T>>] {
        &self.values
    }

    pub fn graph(&self) -> &LawGraph<T> {
        &self.graph
    }
}

/// Backward recursion over the reachable-law graph from `mu0`.
pub fn solve_constrained<T: Scalar>(
    problem: &ConstrainedProblem<T>,
    mu0: &Law<T>,
    options: &ConstrainedOptions,
) -> Result<ConstrainedSolution<T>> {
    let graph = reachable_laws(problem, mu0, options)?;
    let base = &problem.base;
    let horizon = base.horizon();
    let feas_tol = T::lit(options.feasibility_tol);
    let tie = T::lit(options.tie_tol);
    let final_cost = CostFunction::new(horizon, base.final_cost().to_vec())?;

    let mut values: Vec<Vec<Outcome<T>>> = vec![Vec::new(); horizon + 1];
    let mut choices: Vec<Vec<Option<usize>>> = vec![Vec::new(); horizon];
    values[horizon] = graph.layers[horizon]
        .laws
        .iter()
        .map(|mu| {
            if problem.constraint.is_satisfied(mu, feas_tol) {
                Ok(Outcome::Value(pairing(&final_cost, mu)?))
            } else {
                Ok(Outcome::Infeasible)
            }
        })
        .collect::<Result<_>>()?;

    for t in (0..horizon).rev() {
        let space = graph.feedbacks[t];
        let lambdas = (0..space.count())
            .map(|f| stage_cost_functional(base, t, &space.decode(f)))
            .collect::<Result<Vec<_>>>()?;
        let layer = &graph.layers[t];
        let mut vt = Vec::with_capacity(layer.len());
        let mut ct = Vec::with_capacity(layer.len());
        for (i, mu) in layer.laws.iter().enumerate() {
            let mut candidates = Vec::with_capacity(space.count());
            for (f, lambda) in lambdas.iter().enumerate() {
                let q = match values[t + 1][layer.children[i][f]] {
                    Outcome::Value(v) => pairing(lambda, mu)? + v,
                    Outcome::Infeasible => T::infinity(),
                };
                candidates.push(q);
            }
            let (f, q) = tie_broken_argmin(&candidates, tie);
            if q.is_finite() {
                vt.push(Outcome::Value(q));
                ct.push(Some(f));
            } else {
                vt.push(Outcome::Infeasible);
                ct.push(None);
            }
        }
        values[t] = vt;
        choices[t] = ct;
    }

    let law_policy = LawPolicy {
        stages: (0..horizon)
            .map(|t| {
                graph.layers[t]
                    .laws
                    .iter()
                    .zip(&choices[t])
                    .map(|(law, c)| LawPolicyEntry {
                        law: law.clone(),
                        feedback: c.map(|f| graph.feedbacks[t].decode(f)),
                    })
                    .collect()
            })
            .collect(),
        index: graph.layers[..horizon]
            .iter()
            .map(|l| l.index.clone())
            .collect(),
        quantum: options.quantum,
    };
    Ok(ConstrainedSolution {
        value: values[0][0],
        law_policy,
        values,
        choices,
        graph,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanStep<T> {
    pub law: Law<T>,
    pub feedback: Vec<usize>,
}

/// The optimal law trajectory and the feedback applied along it.
#[derive(Debug, Clone, Serialize)]
pub struct Plan<T> {
    pub steps: Vec<PlanStep<T>>,
    pub final_law: Law<T>,
    pub value: T,
}

impl<T: Scalar> Plan<T> {
    /// Law at stage `t`, `0..=N`.
    pub fn law(&self, t: usize) -> &Law<T> {
        self.steps.get(t).map_or(&self.final_law, |s| &s.law)
    }

    /// The feedback sequence, usable as an ordinary Markov policy.
    pub fn policy(&self) -> Policy {
        Policy::from_feedback(self.steps.iter().map(|s| s.feedback.clone()).collect())
    }
}

/// Reads the optimal plan off a feasible solution, starting from `mu0`.
pub fn induced_plan<T: Scalar>(solution: &ConstrainedSolution<T>, mu0: &Law<T>) -> Result<Plan<T>> {
    let value = solution.value.value().ok_or(Error::Infeasible)?;
    if solution.graph.find(0, mu0) != Some(0) {
        return Err(Error::InvalidLaw(
            "initial law differs from the one the solution was computed for".into(),
        ));
    }
    let horizon = solution.choices.len();
    let mut steps = Vec::with_capacity(horizon);
    let mut i = 0;
    for t in 0..horizon {
        let f = solution.choices[t][i].ok_or(Error::Infeasible)?;
        let layer = &solution.graph.layers[t];
        steps.push(PlanStep {
            law: layer.laws[i].clone(),
            feedback: solution.graph.feedbacks[t].decode(f),
        });
        i = layer.children[i][f];
    }
    Ok(Plan {
        steps,
        final_law: solution.graph.layers[horizon].laws[i].clone(),
        value,
    })
}
