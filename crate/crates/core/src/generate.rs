//! Seeded instance generators.
//!
//! Every generator draws from a caller-supplied RNG; the searches use one
//! `ChaCha8Rng::seed_from_u64(seed)` stream per candidate so that any
//! candidate can be regenerated from its seed alone.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{
    audit_constrained_law, audit_constrained_naive, audit_deterministic_rolling, AuditReport, Gap,
};
use crate::constrained::{make_chance_constraint, ConstrainedOptions, ConstrainedProblem};
use crate::error::{Error, Result};
use crate::fokker_planck::Law;
use crate::mdp::{FiniteSocProblem, Policy};

/// Sizes of a stage-homogeneous random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub controls: usize,
    pub noises: usize,
    pub stages: usize,
}

impl Dims {
    /// Draws each size uniformly in `1..=bound`.
    pub fn sample_within<R: Rng + ?Sized>(bound: &Dims, rng: &mut R) -> Dims {
        Dims {
            states: rng.gen_range(1..=bound.states),
            controls: rng.gen_range(1..=bound.controls),
            noises: rng.gen_range(1..=bound.noises),
            stages: rng.gen_range(1..=bound.stages),
        }
    }
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weights uniform in `[0.1, 1)`, normalized.
pub fn random_probabilities<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Uniform dynamics, costs in `[0, 10)`, random noise laws.
pub fn random_problem<R: Rng + ?Sized>(dims: &Dims, rng: &mut R) -> FiniteSocProblem<f64> {
    let n = dims.stages;
    let noise_laws = (0..n)
        .map(|_| random_probabilities(dims.noises, rng))
        .collect();
    let cells = dims.states * dims.controls * dims.noises;
    let dynamics = (0..n)
        .map(|_| (0..cells).map(|_| rng.gen_range(0..dims.states)).collect())
        .collect();
    let costs = (0..n)
        .map(|_| (0..cells).map(|_| rng.gen_range(0.0..10.0)).collect())
        .collect();
    let final_cost = (0..dims.states).map(|_| rng.gen_range(0.0..10.0)).collect();
    FiniteSocProblem::new(
        vec![dims.states; n + 1],
        vec![dims.controls; n],
        noise_laws,
        dynamics,
        costs,
        final_cost,
    )
    .expect("generated tables have consistent shapes")
}

pub fn random_policy<R: Rng + ?Sized>(problem: &FiniteSocProblem<f64>, rng: &mut R) -> Policy {
    let feedback = (0..problem.horizon())
        .map(|t| {
            (0..problem.state_size(t))
                .map(|_| rng.gen_range(0..problem.control_size(t)))
                .collect()
        })
        .collect();
    Policy::new(problem, feedback).expect("feedback drawn within control ranges")
}

pub fn random_law<R: Rng + ?Sized>(stage: usize, size: usize, rng: &mut R) -> Law<f64> {
    Law::new(stage, random_probabilities(size, rng)).expect("normalized weights")
}

/// Random problem with `P(h(x_N) >= 0.5) <= pi`, `h` uniform in `[0, 1)`
/// and `pi` uniform in `[0.05, 0.95)`.
pub fn random_chance_constrained<R: Rng + ?Sized>(
    dims: &Dims,
    rng: &mut R,
) -> ConstrainedProblem<f64> {
    let base = random_problem(dims, rng);
    let h: Vec<f64> = (0..dims.states).map(|_| rng.gen_range(0.0..1.0)).collect();
    let pi = rng.gen_range(0.05..0.95);
    let constraint = make_chance_constraint(&h, 0.5, pi).expect("pi drawn inside [0, 1]");
    ConstrainedProblem::new(base, constraint).expect("constraint sized to final states")
}

/// A noise-free instance of the multiplicative family
/// `x_{t+1} = 2^{e_t(u)} x_t`, cost `sum_t l_t(u_t) x_t + K x_N`, encoded on
/// a per-stage grid of positive powers of two closed under the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicativeInstance {
    pub problem: FiniteSocProblem<f64>,
    /// `grid[t][i]` is the real state value of index `i` at stage `t`.
    pub grid: Vec<Vec<f64>>,
}

impl MultiplicativeInstance {
    pub fn index_of(&self, t: usize, value: f64) -> Option<usize> {
        self.grid[t].iter().position(|&v| v == value)
    }

    pub fn labels(&self) -> Vec<Vec<String>> {
        self.grid
            .iter()
            .map(|g| g.iter().map(|v| format!("{v}")).collect())
            .collect()
    }
}

/// Stage-0 grid is `{1, 2, ..., 2^span}`; each control scales the state by
/// `1/2`, `1` or `2`, and stage grids widen so that every image stays on
/// the grid.
pub fn multiplicative_instance<R: Rng + ?Sized>(
    stages: usize,
    controls: usize,
    span: u32,
    rng: &mut R,
) -> MultiplicativeInstance {
    let exponents: Vec<Vec<i32>> = (0..stages)
        .map(|_| (0..controls).map(|_| rng.gen_range(-1..=1)).collect())
        .collect();
    let unit_costs: Vec<Vec<f64>> = (0..stages)
        .map(|_| (0..controls).map(|_| rng.gen_range(-1.0..2.0)).collect())
        .collect();
    let terminal = rng.gen_range(-1.0..2.0);

    let mut lo = vec![0i32; stages + 1];
    let mut hi = vec![span as i32; stages + 1];
    for t in 0..stages {
        lo[t + 1] = lo[t] + exponents[t].iter().copied().min().unwrap_or(0);
        hi[t + 1] = hi[t] + exponents[t].iter().copied().max().unwrap_or(0);
    }
    let grid: Vec<Vec<f64>> = (0..=stages)
        .map(|t| (lo[t]..=hi[t]).map(|k| 2f64.powi(k)).collect())
        .collect();
    let sizes = grid.iter().map(Vec::len).collect();
    let problem = FiniteSocProblem::from_fn(
        sizes,
        vec![controls; stages],
        vec![vec![1.0]; stages],
        |t, x, u, _| {
            let k = lo[t] + x as i32 + exponents[t][u];
            (k - lo[t + 1]) as usize
        },
        |t, x, u, _| unit_costs[t][u] * grid[t][x],
        |x| terminal * grid[stages][x],
    )
    .expect("grid tables have consistent shapes");
    MultiplicativeInstance { problem, grid }
}

/// Random noise-free problem with `noises == 1`.
pub fn random_deterministic<R: Rng + ?Sized>(
    states: usize,
    controls: usize,
    stages: usize,
    rng: &mut R,
) -> FiniteSocProblem<f64> {
    random_problem(
        &Dims {
            states,
            controls,
            noises: 1,
            stages,
        },
        rng,
    )
}

/// A seeded constrained instance: `x_0 = 0`, 2 controls, 2 noises, 2-3
/// states, 2-3 stages, and a chance constraint on the final state.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub seed: u64,
    pub problem: ConstrainedProblem<f64>,
    pub initial_state: usize,
}

pub fn naive_witness_candidate(seed: u64) -> Candidate {
    let mut rng = rng_for(seed);
    let dims = Dims {
        states: rng.gen_range(2..=3),
        controls: 2,
        noises: 2,
        stages: rng.gen_range(2..=3),
    };
    Candidate {
        seed,
        problem: random_chance_constrained(&dims, &mut rng),
        initial_state: 0,
    }
}

#[derive(Debug, Clone)]
pub struct NaiveWitness {
    pub candidate: Candidate,
    pub naive: AuditReport<f64>,
    pub law: AuditReport<f64>,
    /// Candidates examined, including this one.
    pub examined: usize,
}

/// Scans seeds `first_seed..first_seed + max_candidates` for an instance
/// whose stage-0 problem is feasible and whose naive audit exhibits a
/// finite gap above `min_gap`. The law audit of the same instance is
/// returned alongside.
pub fn search_naive_witness(
    first_seed: u64,
    max_candidates: usize,
    options: &ConstrainedOptions,
    tolerance: f64,
    min_gap: f64,
) -> Result<Option<NaiveWitness>> {
    for k in 0..max_candidates {
        let candidate = naive_witness_candidate(first_seed + k as u64);
        let base = candidate.problem.base();
        let mu0 = Law::dirac(0, base.state_size(0), candidate.initial_state)?;
        let naive = match audit_constrained_naive(&candidate.problem, &mu0, options, tolerance) {
            Ok(report) => report,
            Err(Error::Infeasible) => continue,
            Err(e) => return Err(e),
        };
        let witnessed = naive
            .witnesses
            .iter()
            .any(|w| matches!(w.gap, Gap::Finite(g) if g > min_gap));
        if witnessed {
            let law = audit_constrained_law(&candidate.problem, &mu0, options, tolerance)?;
            return Ok(Some(NaiveWitness {
                candidate,
                naive,
                law,
                examined: k + 1,
            }));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct RollingWitness {
    pub seed: u64,
    pub problem: FiniteSocProblem<f64>,
    pub initial_state: usize,
    pub overrides: Vec<Option<usize>>,
    pub report: AuditReport<f64>,
}

/// Scans seeded noise-free problems (3-4 states, 2 controls, 3 stages) for
/// one where perturbing the state reached at stage 1 makes the original
/// open-loop plan suboptimal. The perturbation moves the state to the next
/// index (cyclically).
pub fn search_rolling_witness(
    first_seed: u64,
    max_candidates: usize,
    tolerance: f64,
) -> Result<Option<RollingWitness>> {
    for k in 0..max_candidates {
        let seed = first_seed + k as u64;
        let mut rng = rng_for(seed);
        let states = rng.gen_range(3..=4);
        let problem = random_deterministic(states, 2, 3, &mut rng);
        let (plan, _) = crate::mdp::solve_deterministic(&problem, 0)?;
        let natural = problem.next_state(0, 0, plan[0], 0);
        let mut overrides = vec![None; problem.horizon()];
        overrides[0] = Some((natural + 1) % problem.state_size(1));
        let report = audit_deterministic_rolling(&problem, 0, &overrides, tolerance)?;
        if !report.is_consistent() {
            return Ok(Some(RollingWitness {
                seed,
                problem,
                initial_state: 0,
                overrides,
                report,
            }));
        }
    }
    Ok(None)
}
