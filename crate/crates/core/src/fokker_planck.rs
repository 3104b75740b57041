//! The distributed formulation: a controlled Markov chain seen as a
//! deterministic system whose state is the probability law of `x_t`.
//!
//! For a stage feedback `phi`, [`backward_operator`] integrates a cost
//! function one step backwards,
//!
//!   (A psi)(x) = E_w[ psi(f_t(x, phi(x), w)) ],
//!
//! and [`push_forward`] is its adjoint acting on laws,
//!
//!   (A* mu)(y) = sum_x mu(x) P(f_t(x, phi(x), w) = y),
//!
//! so that `<A psi, mu> = <psi, A* mu>`. The expected cost of a policy is
//! obtained either forwards, by transporting the law and pairing it with the
//! expected stage costs, or backwards, by integrating the cost-to-go and
//! pairing it once with the initial law.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{CostToGo, FiniteSocProblem, Policy};
use crate::scalar::Scalar;

/// A probability vector over the state space of one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Law<T> {
    stage: usize,
    weights: Vec<T>,
}

impl<T: Scalar> Law<T> {
    /// Checks nonnegativity and unit mass within `T::LAW_TOL`.
    pub fn new(stage: usize, weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidLaw("empty support".into()));
        }
        if let Some((x, p)) = weights
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < T::zero())
        {
            return Err(Error::InvalidLaw(format!("weight {p} at state {x}")));
        }
        let mass: T = weights.iter().copied().sum();
        if (mass - T::one()).abs() > T::lit(T::LAW_TOL) {
            return Err(Error::InvalidLaw(format!("total mass {mass}")));
        }
        Ok(Self { stage, weights })
    }

    pub(crate) fn from_raw(stage: usize, weights: Vec<T>) -> Self {
        Self { stage, weights }
    }

    pub fn dirac(stage: usize, size: usize, state: usize) -> Result<Self> {
        if state >= size {
            return Err(Error::IndexOutOfRange {
                what: "Dirac state",
                index: state,
                size,
            });
        }
        let mut weights = vec![T::zero(); size];
        weights[state] = T::one();
        Ok(Self { stage, weights })
    }

    pub fn uniform(stage: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidLaw("empty support".into()));
        }
        let p = T::one() / T::lit(size as f64);
        Ok(Self {
            stage,
            weights: vec![p; size],
        })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// States carrying more than `threshold` mass.
    pub fn support(&self, threshold: T) -> impl Iterator<Item = (usize, T)> + '_ {
        self.weights
            .iter()
            .copied()
            .enumerate()
            .filter(move |(_, p)| *p > threshold)
    }

    /// The point-mass state, if this law is a Dirac.
    pub fn dirac_state(&self) -> Option<usize> {
        let mut nonzero = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > T::zero());
        match (nonzero.next(), nonzero.next()) {
            (Some((x, _)), None) => Some(x),
            _ => None,
        }
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, alpha: T, other: &Law<T>) -> Result<Law<T>> {
        check_same_shape(
            "mixed law",
            self.stage,
            self.len(),
            other.stage,
            other.len(),
        )?;
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| alpha * a + (T::one() - alpha) * b)
            .collect();
        Law::new(self.stage, weights)
    }

    /// Same weights, relabelled to another stage (used when a subsequent
    /// problem renumbers its first stage to 0).
    pub fn at_stage(&self, stage: usize) -> Law<T> {
        Law {
            stage,
            weights: self.weights.clone(),
        }
    }

    /// Integer key after rounding every coordinate to a multiple of
    /// `quantum`. Laws with equal keys are treated as the same law.
    pub fn quantized_key(&self, quantum: f64) -> Vec<i64> {
        self.weights
            .iter()
            .map(|p| (p.as_f64() / quantum).round() as i64)
            .collect()
    }
}

/// A real-valued function on the state space of one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostFunction<T> {
    stage: usize,
    values: Vec<T>,
}

impl<T: Scalar> CostFunction<T> {
    pub fn new(stage: usize, values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost function"));
        }
        Ok(Self { stage, values })
    }

    pub fn constant(stage: usize, size: usize, c: T) -> Self {
        Self {
            stage,
            values: vec![c; size],
        }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn add(mut self, other: &CostFunction<T>) -> Self {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + b;
        }
        self
    }
}

fn check_same_shape(
    what: &'static str,
    stage: usize,
    len: usize,
    other_stage: usize,
    other_len: usize,
) -> Result<()> {
    if stage != other_stage {
        return Err(Error::StageMismatch {
            what,
            expected: stage,
            found: other_stage,
        });
    }
    if len != other_len {
        return Err(Error::DimensionMismatch {
            what,
            expected: len,
            found: other_len,
        });
    }
    Ok(())
}

/// `(A_t psi_next)(x) = E_w[psi_next(f_t(x, feedback(x), w))]`.
pub fn backward_operator<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    t: usize,
    feedback: &[usize],
    psi_next: &CostFunction<T>,
) -> Result<CostFunction<T>> {
    problem.check_feedback(t, feedback)?;
    check_same_shape(
        "backward operator argument",
        t + 1,
        problem.state_size(t + 1),
        psi_next.stage,
        psi_next.len(),
    )?;
    let law = problem.noise_law(t);
    let values = feedback
        .iter()
        .enumerate()
        .map(|(x, &u)| {
            law.iter().enumerate().fold(T::zero(), |acc, (w, &p)| {
                acc + p * psi_next.values[problem.next_state(t, x, u, w)]
            })
        })
        .collect();
    Ok(CostFunction { stage: t, values })
}

/// Transports `mu` through one transition under `feedback` by scattering
/// each state's mass onto its noise-indexed successors.
pub fn push_forward<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    t: usize,
    feedback: &[usize],
    mu: &Law<T>,
) -> Result<Law<T>> {
    problem.check_feedback(t, feedback)?;
    check_same_shape("pushed law", t, problem.state_size(t), mu.stage, mu.len())?;
    let mut out = vec![T::zero(); problem.state_size(t + 1)];
    let law = problem.noise_law(t);
    for (x, &m) in mu.weights.iter().enumerate() {
        if m == T::zero() {
            continue;
        }
        let u = feedback[x];
        for (w, &p) in law.iter().enumerate() {
            let y = problem.next_state(t, x, u, w);
            out[y] = out[y] + m * p;
        }
    }
    Ok(Law::from_raw(t + 1, out))
}

/// `Lambda_t(x) = E_w[L_t(x, feedback(x), w)]`.
pub fn stage_cost_functional<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    t: usize,
    feedback: &[usize],
) -> Result<CostFunction<T>> {
    problem.check_feedback(t, feedback)?;
    let law = problem.noise_law(t);
    let values = feedback
        .iter()
        .enumerate()
        .map(|(x, &u)| {
            law.iter().enumerate().fold(T::zero(), |acc, (w, &p)| {
                acc + p * problem.stage_cost(t, x, u, w)
            })
        })
        .collect();
    Ok(CostFunction { stage: t, values })
}

/// `<psi, mu> = sum_x psi(x) mu(x)`.
pub fn pairing<T: Scalar>(psi: &CostFunction<T>, mu: &Law<T>) -> Result<T> {
    check_same_shape("pairing", psi.stage, psi.len(), mu.stage, mu.len())?;
    Ok(psi
        .values
        .iter()
        .zip(&mu.weights)
        .fold(T::zero(), |acc, (&v, &p)| acc + v * p))
}

fn final_cost_function<T: Scalar>(problem: &FiniteSocProblem<T>) -> CostFunction<T> {
    CostFunction {
        stage: problem.horizon(),
        values: problem.final_cost().to_vec(),
    }
}

fn check_initial<T: Scalar>(problem: &FiniteSocProblem<T>, mu0: &Law<T>) -> Result<()> {
    check_same_shape(
        "initial law",
        0,
        problem.state_size(0),
        mu0.stage,
        mu0.len(),
    )
}

/// The law trajectory `mu_0, ..., mu_N` generated by `policy`.
pub fn law_trajectory<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    policy: &Policy,
    mu0: &Law<T>,
) -> Result<Vec<Law<T>>> {
    check_initial(problem, mu0)?;
    let mut laws = Vec::with_capacity(problem.horizon() + 1);
    laws.push(mu0.clone());
    for t in 0..problem.horizon() {
        let next = push_forward(problem, t, policy.stage(t), &laws[t])?;
        laws.push(next);
    }
    Ok(laws)
}

/// `sum_t <Lambda_t, mu_t> + <K, mu_N>` along the forward law dynamics.
pub fn forward_cost<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    policy: &Policy,
    mu0: &Law<T>,
) -> Result<T> {
    policy.check_against(problem)?;
    check_initial(problem, mu0)?;
    let mut mu = mu0.clone();
    let mut total = T::zero();
    for t in 0..problem.horizon() {
        let lambda = stage_cost_functional(problem, t, policy.stage(t))?;
        total = total + pairing(&lambda, &mu)?;
        mu = push_forward(problem, t, policy.stage(t), &mu)?;
    }
    Ok(total + pairing(&final_cost_function(problem), &mu)?)
}

/// Backward formulation: `psi_N = K`, `psi_t = A_t psi_{t+1} + Lambda_t`,
/// total cost `<psi_0, mu0>`. Returns the cost and the full `psi` table.
pub fn backward_cost<T: Scalar>(
    problem: &FiniteSocProblem<T>,
    policy: &Policy,
    mu0: &Law<T>,
) -> Result<(T, CostToGo<T>)> {
    policy.check_against(problem)?;
    check_initial(problem, mu0)?;
    let horizon = problem.horizon();
    let mut psi = vec![final_cost_function(problem)];
    for t in (0..horizon).rev() {
        let next = psi.last().expect("nonempty");
        let integrated = backward_operator(problem, t, policy.stage(t), next)?;
        let lambda = stage_cost_functional(problem, t, policy.stage(t))?;
        psi.push(integrated.add(&lambda));
    }
    psi.reverse();
    let cost = pairing(&psi[0], mu0)?;
    Ok((
        cost,
        CostToGo::new(psi.into_iter().map(|f| f.values).collect()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two states, two noises with law [0.3, 0.7]; from x0 the noise picks
    /// the next state, x1 is absorbing.
    fn two_noise() -> FiniteSocProblem<f64> {
        FiniteSocProblem::from_fn(
            vec![2, 2],
            vec![1],
            vec![vec![0.3, 0.7]],
            |_, x, _, w| if x == 0 { w } else { 1 },
            |_, _, _, w| [2.0, 6.0][w],
            |_| 0.0,
        )
        .unwrap()
    }

    #[test]
    fn backward_of_constant_is_constant() {
        let p = two_noise();
        let psi = CostFunction::constant(1, 2, 7.5);
        let out = backward_operator(&p, 0, &[0, 0], &psi).unwrap();
        assert_eq!(out.values(), &[7.5, 7.5]);
    }

    #[test]
    fn backward_two_term_expectation() {
        let p = two_noise();
        let psi = CostFunction::new(1, vec![1.0, 5.0]).unwrap();
        let out = backward_operator(&p, 0, &[0, 0], &psi).unwrap();
        assert!((out.values()[0] - 3.8).abs() < 1e-15);
        assert_eq!(out.values()[1], 5.0);
    }

    #[test]
    fn push_forward_transports_mass() {
        let p = two_noise();
        let mu = Law::dirac(0, 2, 0).unwrap();
        let out = push_forward(&p, 0, &[0, 0], &mu).unwrap();
        assert_eq!(out.stage(), 1);
        assert_eq!(out.weights(), &[0.3, 0.7]);
    }

    #[test]
    fn push_forward_constant_dynamics_is_dirac() {
        let p = FiniteSocProblem::from_fn(
            vec![3, 4],
            vec![2],
            vec![vec![0.2, 0.8]],
            |_, _, _, _| 2,
            |_, _, _, _| 0.0,
            |_| 0.0,
        )
        .unwrap();
        let mu = Law::<f64>::new(0, vec![0.2, 0.5, 0.3]).unwrap();
        let out = push_forward(&p, 0, &[0, 1, 0], &mu).unwrap();
        assert_eq!(out.dirac_state(), Some(2));
        assert!((out.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stage_cost_two_term_average() {
        let p = FiniteSocProblem::from_fn(
            vec![1, 1],
            vec![1],
            vec![vec![0.5, 0.5]],
            |_, _, _, _| 0,
            |_, _, _, w| [2.0, 6.0][w],
            |_| 0.0,
        )
        .unwrap();
        let lambda = stage_cost_functional(&p, 0, &[0]).unwrap();
        assert_eq!(lambda.values(), &[4.0]);
    }

    #[test]
    fn pairing_dot_product() {
        let psi = CostFunction::<f64>::new(0, vec![1.0, 2.0, 3.0]).unwrap();
        let mu = Law::new(0, vec![0.2, 0.3, 0.5]).unwrap();
        assert!((pairing(&psi, &mu).unwrap() - 2.3).abs() < 1e-15);
        let ones = CostFunction::constant(0, 3, 1.0);
        assert!((pairing(&ones, &mu).unwrap() - 1.0).abs() < 1e-15);
        let dirac = Law::dirac(0, 3, 2).unwrap();
        assert_eq!(pairing(&psi, &dirac).unwrap(), 3.0);
    }

    #[test]
    fn mismatches_are_errors() {
        let p = two_noise();
        let psi = CostFunction::constant(0, 2, 1.0);
        assert!(matches!(
            backward_operator(&p, 0, &[0, 0], &psi),
            Err(Error::StageMismatch { .. })
        ));
        let mu = Law::dirac(1, 2, 0).unwrap();
        assert!(matches!(
            push_forward(&p, 0, &[0, 0], &mu),
            Err(Error::StageMismatch { .. })
        ));
        let short = Law::dirac(0, 3, 0).unwrap();
        assert!(pairing(&CostFunction::constant(0, 2, 1.0), &short).is_err());
        assert!(push_forward(&p, 0, &[0], &Law::dirac(0, 2, 0).unwrap()).is_err());
        assert!(stage_cost_functional(&p, 1, &[0, 0]).is_err());
    }

    #[test]
    fn law_constructor_checks() {
        assert!(Law::<f64>::new(0, vec![0.5, 0.6]).is_err());
        assert!(Law::<f64>::new(0, vec![-0.1, 1.1]).is_err());
        assert!(Law::<f64>::new(0, vec![]).is_err());
        assert!(Law::<f64>::dirac(0, 2, 2).is_err());
        let u = Law::<f64>::uniform(0, 4).unwrap();
        assert_eq!(u.dirac_state(), None);
    }

    #[test]
    fn forward_and_backward_on_single_path() {
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
        assert_eq!(forward_cost(&p, &pol, &mu).unwrap(), 4.0);
        let (c, psi) = backward_cost(&p, &pol, &mu).unwrap();
        assert_eq!(c, 4.0);
        assert_eq!(psi.at(0), &[4.0]);
        assert_eq!(psi.at(1), &[0.0, 1.5]);
    }
}
