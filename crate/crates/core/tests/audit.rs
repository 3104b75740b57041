use timecons::audit::{
    audit_constrained_law, audit_constrained_naive, audit_deterministic_rolling,
    audit_unconstrained, Gap, Verdict, DEFAULT_AUDIT_TOL,
};
use timecons::constrained::{ConstrainedOptions, ConstrainedProblem};
use timecons::fokker_planck::Law;
use timecons::generate::{
    multiplicative_instance, random_chance_constrained, random_deterministic, random_problem,
    rng_for, search_naive_witness, search_rolling_witness, Dims,
};
use timecons::mdp::solve_deterministic;
use timecons::Error;

const TOL: f64 = DEFAULT_AUDIT_TOL;

fn max_finite_gap(report: &timecons::AuditReport) -> f64 {
    report
        .witnesses
        .iter()
        .filter_map(|w| w.gap.finite())
        .fold(0.0, f64::max)
}

fn min_finite_gap(report: &timecons::AuditReport) -> f64 {
    report
        .witnesses
        .iter()
        .filter_map(|w| w.gap.finite())
        .fold(f64::INFINITY, f64::min)
}

fn constrained(seed: u64) -> ConstrainedProblem<f64> {
    let mut rng = rng_for(seed);
    let dims = Dims::sample_within(
        &Dims {
            states: 3,
            controls: 2,
            noises: 2,
            stages: 3,
        },
        &mut rng,
    );
    random_chance_constrained(&dims, &mut rng)
}

#[test]
fn unconstrained_problems_are_consistent() {
    let bound = Dims {
        states: 4,
        controls: 3,
        noises: 3,
        stages: 4,
    };
    for seed in 0..100 {
        let mut rng = rng_for(seed);
        let dims = Dims::sample_within(&bound, &mut rng);
        let p = random_problem(&dims, &mut rng);
        let report = audit_unconstrained(&p, TOL).unwrap();
        assert_eq!(report.verdict, Verdict::Consistent, "seed {seed}");
        assert!(max_finite_gap(&report) < 1e-9);
        assert!(min_finite_gap(&report) >= -1e-12);
    }
}

#[test]
fn single_stage_has_no_subproblems() {
    let mut rng = rng_for(1);
    let p = random_problem(
        &Dims {
            states: 3,
            controls: 2,
            noises: 2,
            stages: 1,
        },
        &mut rng,
    );
    let report = audit_unconstrained(&p, TOL).unwrap();
    assert!(report.witnesses.is_empty());
    assert_eq!(report.verdict, Verdict::Consistent);
}

#[test]
fn vacuous_constraint_passes_naive_audit() {
    for seed in 0..15 {
        let cp = constrained(seed);
        let vacuous = cp.with_level(cp.constraint().max_g()).unwrap();
        let mu0 = Law::dirac(0, cp.base().state_size(0), 0).unwrap();
        let options = ConstrainedOptions::default();
        let naive = audit_constrained_naive(&vacuous, &mu0, &options, TOL).unwrap();
        let law = audit_constrained_law(&vacuous, &mu0, &options, TOL).unwrap();
        assert!(naive.is_consistent(), "seed {seed}");
        assert!(law.is_consistent(), "seed {seed}");
    }
}

#[test]
fn noise_free_naive_and_law_audits_agree() {
    let mut feasible = 0;
    for seed in 0..30 {
        let mut rng = rng_for(seed);
        let cp = random_chance_constrained(
            &Dims {
                states: 3,
                controls: 2,
                noises: 1,
                stages: 3,
            },
            &mut rng,
        );
        let mu0 = Law::dirac(0, 3, 0).unwrap();
        let options = ConstrainedOptions::default();
        let naive = match audit_constrained_naive(&cp, &mu0, &options, TOL) {
            Ok(r) => r,
            Err(Error::Infeasible) => continue,
            Err(e) => panic!("{e}"),
        };
        let law = audit_constrained_law(&cp, &mu0, &options, TOL).unwrap();
        assert_eq!(naive.verdict, Verdict::Consistent, "seed {seed}");
        assert_eq!(naive.verdict, law.verdict);
        feasible += 1;
    }
    assert!(feasible > 5);
}

#[test]
fn law_restarts_are_consistent() {
    let mut audited = 0;
    let mut seed = 0;
    while audited < 20 {
        let cp = constrained(seed);
        let mu0 = Law::dirac(0, cp.base().state_size(0), 0).unwrap();
        match audit_constrained_law(&cp, &mu0, &ConstrainedOptions::default(), TOL) {
            Ok(report) => {
                assert!(report.is_consistent(), "seed {seed}");
                assert!(max_finite_gap(&report) < 1e-9);
                audited += 1;
            }
            Err(Error::Infeasible) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
        seed += 1;
    }
}

#[test]
fn infeasible_root_has_no_verdict() {
    let cp = constrained(0).with_level(-1.0).unwrap();
    let mu0 = Law::dirac(0, cp.base().state_size(0), 0).unwrap();
    let r = audit_constrained_naive(&cp, &mu0, &ConstrainedOptions::default(), TOL);
    assert!(matches!(r, Err(Error::Infeasible)));
}

#[test]
fn naive_witness_pairs_with_consistent_law_audit() {
    let found = search_naive_witness(0, 10_000, &ConstrainedOptions::default(), TOL, 1e-6)
        .unwrap()
        .expect("witness within the search budget");
    assert_eq!(found.naive.verdict, Verdict::Inconsistent);
    assert!(found
        .naive
        .witnesses
        .iter()
        .any(|w| matches!(w.gap, Gap::Finite(g) if g > 1e-6)));
    assert_eq!(found.law.verdict, Verdict::Consistent);
    assert!(max_finite_gap(&found.law) < 1e-9);
}

#[test]
fn identity_overrides_keep_rolling_plans() {
    for seed in 0..30 {
        let mut rng = rng_for(seed);
        let p = random_deterministic(4, 3, 4, &mut rng);
        for x0 in 0..4 {
            let report = audit_deterministic_rolling(&p, x0, &[None; 4], TOL).unwrap();
            assert!(report.is_consistent(), "seed {seed} x0 {x0}");
            assert!(report
                .witnesses
                .iter()
                .all(|w| w.plan_changed == Some(false)));
        }
    }
}

#[test]
fn multiplicative_instance_survives_any_override() {
    for seed in 0..20 {
        let mut rng = rng_for(seed);
        let inst = multiplicative_instance(3, 3, 3, &mut rng);
        let p = &inst.problem;
        for x0 in 0..p.state_size(0) {
            for t in 0..p.horizon() {
                for y in 0..p.state_size(t + 1) {
                    let mut overrides = vec![None; p.horizon()];
                    overrides[t] = Some(y);
                    let report = audit_deterministic_rolling(p, x0, &overrides, TOL).unwrap();
                    assert!(report.is_consistent(), "seed {seed} x0 {x0} t {t} y {y}");
                }
            }
        }
    }
}

#[test]
fn multiplicative_argmin_is_scale_free_and_cost_linear() {
    for seed in 0..20 {
        let mut rng = rng_for(seed);
        let inst = multiplicative_instance(4, 3, 4, &mut rng);
        let unit = inst.index_of(0, 1.0).unwrap();
        let (plan, cost) = solve_deterministic(&inst.problem, unit).unwrap();
        for (i, &x) in inst.grid[0].iter().enumerate() {
            let (p, c) = solve_deterministic(&inst.problem, i).unwrap();
            assert_eq!(p, plan, "seed {seed}");
            assert!((c - x * cost).abs() < 1e-9 * (1.0 + x.abs()), "seed {seed}");
        }
    }
}

#[test]
fn perturbed_open_loop_plan_is_flagged() {
    let found = search_rolling_witness(0, 1000, TOL)
        .unwrap()
        .expect("rolling witness");
    assert_eq!(found.report.verdict, Verdict::Inconsistent);
    assert!(found
        .report
        .witnesses
        .iter()
        .any(|w| w.plan_changed == Some(true)));
}

#[test]
fn rolling_rejects_stochastic_problems() {
    let mut rng = rng_for(0);
    let p = random_problem(
        &Dims {
            states: 2,
            controls: 2,
            noises: 2,
            stages: 2,
        },
        &mut rng,
    );
    assert!(matches!(
        audit_deterministic_rolling(&p, 0, &[None, None], TOL),
        Err(Error::NotDeterministic { .. })
    ));
}

#[test]
fn reports_are_reproducible() {
    let cp = constrained(4);
    let mu0 = Law::dirac(0, cp.base().state_size(0), 0).unwrap();
    let options = ConstrainedOptions::default();
    let a = audit_constrained_naive(&cp, &mu0, &options, TOL);
    let b = audit_constrained_naive(&cp, &mu0, &options, TOL);
    match (a, b) {
        (Ok(a), Ok(b)) => assert_eq!(a, b),
        (Err(Error::Infeasible), Err(Error::Infeasible)) => {}
        (a, b) => panic!("{a:?} / {b:?}"),
    }
}
