use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use timecons::cli::{
    load_scenario, run, write_json, ConstraintSpec, Experiment, InitialSpec, RunOptions, Scenario,
    EXIT_ERROR,
};
use timecons::constrained::ConstrainedOptions;
use timecons::generate::{
    multiplicative_instance, random_chance_constrained, random_problem, rng_for,
    search_naive_witness, search_rolling_witness, Dims,
};

#[derive(Parser)]
#[command(
    name = "timecons",
    version,
    about = "Finite stochastic control solver and time-consistency auditor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and report every problem found.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve the scenario's problem; writes solution.json.
    Solve(RunArgs),
    /// Audit time consistency; writes audit.json.
    Audit {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the scenario's audit experiment, else `naive` when a
        /// constraint is present and `unconstrained` otherwise.
        #[arg(long, value_enum)]
        kind: Option<AuditKind>,
    },
    /// Solve and audit over a range of constraint levels; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated levels (default 0.0 to 1.0 by 0.1).
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
    },
    /// Write a seeded scenario to DIR/scenario.json.
    Generate {
        #[arg(long, value_enum)]
        kind: GenerateKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        controls: usize,
        #[arg(long, default_value_t = 2)]
        noises: usize,
        #[arg(long, default_value_t = 3)]
        stages: usize,
        /// Seeds scanned by the witness searches.
        #[arg(long, default_value_t = 1000)]
        max_candidates: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on reachable laws and law transitions.
    #[arg(long)]
    cap: Option<u64>,
    /// Audit gap tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditKind {
    Unconstrained,
    Naive,
    Law,
    Rolling,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerateKind {
    /// Unconstrained random problem.
    Random,
    /// Random problem with a final chance constraint, set up for a sweep.
    Chance,
    /// Noise-free problem with multiplicative dynamics on a power-of-two grid.
    Multiplicative,
    /// First seeded chance-constrained instance the naive audit flags.
    NaiveWitness,
    /// First seeded noise-free instance the rolling audit flags.
    RollingWitness,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn execute(command: Command) -> Result<i32, String> {
    match command {
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario).map_err(|e| e.to_string())?;
            println!(
                "{}: valid (horizon {}, experiment {})",
                scenario.display(),
                s.problem.control_sizes.len(),
                s.experiment.name()
            );
            Ok(0)
        }
        Command::Solve(args) => {
            let s = load_scenario(&args.scenario).map_err(|e| e.to_string())?;
            let experiment = match s.experiment {
                Experiment::Solve { .. } => s.experiment.clone(),
                _ => Experiment::default(),
            };
            dispatch(&s, &experiment, &args)
        }
        Command::Audit { run: args, kind } => {
            let s = load_scenario(&args.scenario).map_err(|e| e.to_string())?;
            let experiment = match kind {
                Some(AuditKind::Unconstrained) => Experiment::AuditUnconstrained,
                Some(AuditKind::Naive) => Experiment::AuditNaive,
                Some(AuditKind::Law) => Experiment::AuditLaw,
                Some(AuditKind::Rolling) => match &s.experiment {
                    e @ Experiment::AuditRolling { .. } => e.clone(),
                    _ => Experiment::AuditRolling {
                        overrides: vec![None; s.problem.control_sizes.len()],
                    },
                },
                None if s.experiment.is_audit() => s.experiment.clone(),
                None if s.constraint.is_some() => Experiment::AuditNaive,
                None => Experiment::AuditUnconstrained,
            };
            dispatch(&s, &experiment, &args)
        }
        Command::Sweep { run: args, levels } => {
            let s = load_scenario(&args.scenario).map_err(|e| e.to_string())?;
            let levels = match (&s.experiment, levels.is_empty()) {
                (Experiment::Sweep { levels: own }, true) => own.clone(),
                _ => levels,
            };
            dispatch(&s, &Experiment::Sweep { levels }, &args)
        }
        Command::Generate {
            kind,
            out,
            seed,
            states,
            controls,
            noises,
            stages,
            max_candidates,
        } => {
            let dims = Dims {
                states,
                controls,
                noises,
                stages,
            };
            let scenario = generate(kind, seed, &dims, max_candidates)?;
            let path = write_scenario(&out, &scenario)?;
            println!("{}", path.display());
            Ok(0)
        }
    }
}

fn dispatch(scenario: &Scenario, experiment: &Experiment, args: &RunArgs) -> Result<i32, String> {
    let options = RunOptions {
        out_dir: args.out.clone(),
        seed: args.seed,
        cap: args.cap,
        tolerance: args.tol,
    };
    let status = run(scenario, experiment, &options).map_err(|e| e.to_string())?;
    if status.exit_code() != 0 {
        eprintln!("INFEASIBLE: no plan meets the constraint at stage 0");
    }
    Ok(status.exit_code())
}

fn generate(
    kind: GenerateKind,
    seed: u64,
    dims: &Dims,
    max_candidates: usize,
) -> Result<Scenario, String> {
    if dims.states == 0 || dims.controls == 0 || dims.noises == 0 || dims.stages == 0 {
        return Err("dimensions must be positive".into());
    }
    let mut rng = rng_for(seed);
    let mut scenario = match kind {
        GenerateKind::Random => {
            Scenario::from_problem(&random_problem(dims, &mut rng), InitialSpec::State(0))
        }
        GenerateKind::Chance => {
            let cp = random_chance_constrained(dims, &mut rng);
            let mut s = Scenario::from_problem(cp.base(), InitialSpec::State(0));
            s.constraint = Some(ConstraintSpec::Expectation {
                g: cp.constraint().g().to_vec(),
                level: cp.constraint().level(),
            });
            s.experiment = Experiment::Sweep { levels: Vec::new() };
            s
        }
        GenerateKind::Multiplicative => {
            let instance = multiplicative_instance(dims.stages, dims.controls, 3, &mut rng);
            let mut s = Scenario::from_problem(&instance.problem, InitialSpec::State(0));
            s.problem.state_labels = Some(instance.labels());
            s.experiment = Experiment::AuditUnconstrained;
            s
        }
        GenerateKind::NaiveWitness => {
            let found = search_naive_witness(
                seed,
                max_candidates,
                &ConstrainedOptions::default(),
                timecons::audit::DEFAULT_AUDIT_TOL,
                1e-6,
            )
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("no naive witness among {max_candidates} seeds from {seed}"))?;
            let c = &found.candidate;
            let mut s =
                Scenario::from_problem(c.problem.base(), InitialSpec::State(c.initial_state));
            s.constraint = Some(ConstraintSpec::Expectation {
                g: c.problem.constraint().g().to_vec(),
                level: c.problem.constraint().level(),
            });
            s.experiment = Experiment::AuditNaive;
            s.seed = c.seed;
            s
        }
        GenerateKind::RollingWitness => {
            let found =
                search_rolling_witness(seed, max_candidates, timecons::audit::DEFAULT_AUDIT_TOL)
                    .map_err(|e| e.to_string())?
                    .ok_or_else(|| {
                        format!("no rolling witness among {max_candidates} seeds from {seed}")
                    })?;
            let mut s =
                Scenario::from_problem(&found.problem, InitialSpec::State(found.initial_state));
            s.experiment = Experiment::AuditRolling {
                overrides: found.overrides.clone(),
            };
            s.seed = found.seed;
            s
        }
    };
    if scenario.seed == 0 {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn write_scenario(out: &Path, scenario: &Scenario) -> Result<PathBuf, String> {
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let path = out.join("scenario.json");
    write_json(&path, scenario).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}
