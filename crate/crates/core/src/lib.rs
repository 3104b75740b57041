//! Finite-space stochastic optimal control and time-consistency auditing.
//!
//! * [`mdp`]: problem model, classical backward dynamic programming, exact
//!   policy evaluation, simulation, policy enumeration.
//! * [`fokker_planck`]: the same problems seen through their state laws;
//!   backward cost integration, forward law transport, and the two dual
//!   ways of computing a policy's cost.
//! * [`constrained`]: final expectation and chance constraints, solved by
//!   dynamic programming over reachable probability laws.
//! * [`audit`]: checks whether stage-0 strategies stay optimal for the
//!   subsequent problems under a given information structure.
//! * [`cli`]: JSON scenarios, experiment runs, and result files.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the scenario format uses.

pub mod audit;
pub mod cli;
pub mod constrained;
pub mod error;
pub mod fokker_planck;
pub mod generate;
pub mod mdp;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Problem = mdp::FiniteSocProblem<f64>;
pub type Law = fokker_planck::Law<f64>;
pub type CostFunction = fokker_planck::CostFunction<f64>;
pub type CostToGo = mdp::CostToGo<f64>;
pub type Trajectory = mdp::Trajectory<f64>;
pub type Constraint = constrained::ExpectationConstraint<f64>;
pub type ConstrainedProblem = constrained::ConstrainedProblem<f64>;
pub type ConstrainedSolution = constrained::ConstrainedSolution<f64>;
pub type Plan = constrained::Plan<f64>;
pub type AuditReport = audit::AuditReport<f64>;

pub use mdp::Policy;
