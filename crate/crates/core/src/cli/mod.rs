//! Scenario files, experiment runs and result files behind the `timecons`
//! binary.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when the stage-0
//! constrained problem is infeasible.

pub mod output;
pub mod run;
pub mod scenario;

pub use output::{format_float, to_json_string, write_json};
pub use run::{default_levels, run, RunError, RunOptions, Status};
pub use scenario::{
    load_scenario, ConstraintSpec, Experiment, InitialSpec, ProblemSpec, Scenario, ScenarioError,
    ThresholdSpec,
};

pub const EXIT_ERROR: i32 = 1;
