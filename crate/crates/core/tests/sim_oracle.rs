mod common;

use it2mof_core::sim;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn componentwise_loop_matches_augmented_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..20 {
        let kappa = 1 + case % 3;
        let horizon = rng.gen_range(20..60);
        let sc = common::random_scenario(&mut rng, kappa, horizon);
        let trace = sim::run(&sc).unwrap();
        let aug = sim::run_augmented(&sc).unwrap();
        for (t, step) in trace.steps.iter().enumerate() {
            for (i, (a, b)) in step.x.iter().zip(aug[t].iter()).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-9 * b.abs().max(1.0),
                    "case {case} (kappa {kappa}) t {t} x_{i}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn seeded_runs_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sc = common::random_scenario(&mut rng, 3, 200);
    assert_eq!(sim::run(&sc).unwrap(), sim::run(&sc).unwrap());
    let other = sim::run(&sc.with_seed(sc.seed + 1)).unwrap();
    assert_ne!(sim::run(&sc).unwrap(), other);
}
