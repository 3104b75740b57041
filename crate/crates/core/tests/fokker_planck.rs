mod common;

use common::{close, final_law, law_value};
use proptest::prelude::*;
use rand::Rng;
use timecons::fokker_planck::{
    backward_cost, backward_operator, forward_cost, law_trajectory, pairing, push_forward,
    CostFunction,
};
use timecons::generate::{random_law, random_policy, random_problem, rng_for, Dims};

const BOUND: Dims = Dims {
    states: 4,
    controls: 3,
    noises: 3,
    stages: 4,
};

fn triple(seed: u64) -> (timecons::Problem, timecons::Policy, timecons::Law) {
    let mut rng = rng_for(seed);
    let dims = Dims::sample_within(&BOUND, &mut rng);
    let p = random_problem(&dims, &mut rng);
    let pol = random_policy(&p, &mut rng);
    let mu = random_law(0, p.state_size(0), &mut rng);
    (p, pol, mu)
}

#[test]
fn forward_cost_matches_path_enumeration() {
    for seed in 0..30 {
        let (p, pol, mu) = triple(seed);
        let f = forward_cost(&p, &pol, &mu).unwrap();
        assert!(
            close(f, law_value(&p, &pol, mu.weights()), 1e-9),
            "seed {seed}"
        );
    }
}

#[test]
fn final_law_matches_path_enumeration() {
    for seed in 0..30 {
        let (p, pol, mu) = triple(seed);
        let laws = law_trajectory(&p, &pol, &mu).unwrap();
        let oracle = final_law(&p, &pol, mu.weights());
        let last = laws.last().unwrap();
        assert_eq!(last.stage(), p.horizon());
        for (a, b) in last.weights().iter().zip(&oracle) {
            assert!(close(*a, *b, 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn push_forward_conserves_mass(seed in any::<u64>()) {
        let (p, pol, mu) = triple(seed);
        for law in law_trajectory(&p, &pol, &mu).unwrap() {
            prop_assert!(close(law.mass(), 1.0, 1e-12));
            prop_assert!(law.weights().iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn operators_are_adjoint(seed in any::<u64>()) {
        let (p, pol, mu) = triple(seed);
        let mut rng = rng_for(!seed);
        let t = rng.gen_range(0..p.horizon());
        let mu_t = law_trajectory(&p, &pol, &mu).unwrap()[t].clone();
        let psi = CostFunction::new(
            t + 1,
            (0..p.state_size(t + 1)).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        )
        .unwrap();
        let lhs = pairing(&backward_operator(&p, t, pol.stage(t), &psi).unwrap(), &mu_t).unwrap();
        let rhs = pairing(&psi, &push_forward(&p, t, pol.stage(t), &mu_t).unwrap()).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn forward_and_backward_costs_agree(seed in any::<u64>()) {
        let (p, pol, mu) = triple(seed);
        let f = forward_cost(&p, &pol, &mu).unwrap();
        let (b, psi) = backward_cost(&p, &pol, &mu).unwrap();
        prop_assert!(close(f, b, 1e-9));
        prop_assert_eq!(psi.stages().len(), p.horizon() + 1);
    }
}
