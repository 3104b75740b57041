//! Independent oracles. Everything here walks explicit noise paths and uses
//! only the problem's table accessors, never the crate's solvers or law
//! operators.

#![allow(dead_code)]

use timecons::constrained::ConstrainedProblem;
use timecons::mdp::{enumerate_policies, FiniteSocProblem, Policy};
use timecons::Scalar;

/// Expected cost of `policy` from `x` at stage `t`, by recursion over every
/// noise outcome.
pub fn path_value<T: Scalar>(p: &FiniteSocProblem<T>, policy: &Policy, t: usize, x: usize) -> f64 {
    if t == p.horizon() {
        return p.final_cost()[x].as_f64();
    }
    let u = policy.stage(t)[x];
    p.noise_law(t)
        .iter()
        .enumerate()
        .map(|(w, q)| {
            let next = p.next_state(t, x, u, w);
            q.as_f64() * (p.stage_cost(t, x, u, w).as_f64() + path_value(p, policy, t + 1, next))
        })
        .sum()
}

pub fn law_value<T: Scalar>(p: &FiniteSocProblem<T>, policy: &Policy, mu0: &[f64]) -> f64 {
    mu0.iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(x, m)| m * path_value(p, policy, 0, x))
        .sum()
}

/// Final-state distribution under `policy`, by enumerating noise paths.
pub fn final_law<T: Scalar>(p: &FiniteSocProblem<T>, policy: &Policy, mu0: &[f64]) -> Vec<f64> {
    fn walk<T: Scalar>(
        p: &FiniteSocProblem<T>,
        policy: &Policy,
        t: usize,
        x: usize,
        mass: f64,
        out: &mut [f64],
    ) {
        if t == p.horizon() {
            out[x] += mass;
            return;
        }
        let u = policy.stage(t)[x];
        for (w, q) in p.noise_law(t).iter().enumerate() {
            walk(
                p,
                policy,
                t + 1,
                p.next_state(t, x, u, w),
                mass * q.as_f64(),
                out,
            );
        }
    }
    let mut out = vec![0.0; p.state_size(p.horizon())];
    for (x, &m) in mu0.iter().enumerate() {
        if m > 0.0 {
            walk(p, policy, 0, x, m, &mut out);
        }
    }
    out
}

/// Minimum over all Markov feedback policies of the expected cost from
/// Dirac(x0).
pub fn brute_force_min(p: &FiniteSocProblem<f64>, x0: usize) -> f64 {
    enumerate_policies(p, 1 << 24)
        .expect("small instance")
        .map(|pol| path_value(p, &pol, 0, x0))
        .fold(f64::INFINITY, f64::min)
}

/// Constrained brute force over feedback sequences.
pub struct ConstrainedOracle {
    /// `None` when no policy is feasible.
    pub value: Option<f64>,
    /// Smallest `|<g, mu_N> - a|` over all policies; instances closer than
    /// 1e-8 to the boundary are knife-edge.
    pub boundary_distance: f64,
}

pub fn constrained_brute_force(cp: &ConstrainedProblem<f64>, mu0: &[f64]) -> ConstrainedOracle {
    let p = cp.base();
    let g = cp.constraint().g();
    let a = cp.constraint().level();
    let mut value: Option<f64> = None;
    let mut boundary_distance = f64::INFINITY;
    for pol in enumerate_policies(p, 1 << 24).expect("small instance") {
        let law = final_law(p, &pol, mu0);
        let eg: f64 = law.iter().zip(g).map(|(m, gx)| m * gx).sum();
        boundary_distance = boundary_distance.min((eg - a).abs());
        if eg <= a + 1e-9 {
            let v = law_value(p, &pol, mu0);
            value = Some(value.map_or(v, |best| best.min(v)));
        }
    }
    ConstrainedOracle {
        value,
        boundary_distance,
    }
}

pub fn dirac(n: usize, x: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[x] = 1.0;
    v
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
