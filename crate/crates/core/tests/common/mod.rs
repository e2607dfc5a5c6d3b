#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roundsafe::model::{random_mdp, RandomShape, GOAL_LABEL};
use roundsafe::oracle::DEFAULT_SCHEDULER_LIMIT;
use roundsafe::rounding::float_to_rational;
use roundsafe::{exact_reachability, Mdp, Opt, Rational, StateSet};

pub fn q(n: i64, d: i64) -> Rational {
    Rational::new(n.into(), d.into())
}

pub fn exact(x: f64) -> Rational {
    float_to_rational(x).expect("finite")
}

pub fn goal(m: &Mdp) -> StateSet {
    m.label(GOAL_LABEL).unwrap().clone()
}

/// Seeded random models with the default shape.
pub fn suite(count: usize, seed: u64, shape: RandomShape) -> Vec<Mdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_mdp(&mut rng, &shape)).collect()
}

/// Exact optimum from every state.
pub fn oracle_all(m: &Mdp, goal: &StateSet, opt: Opt) -> Vec<Rational> {
    (0..m.state_count())
        .map(|s| {
            exact_reachability(&m.with_initial(s), goal, opt, DEFAULT_SCHEDULER_LIMIT)
                .unwrap()
                .value
        })
        .collect()
}
