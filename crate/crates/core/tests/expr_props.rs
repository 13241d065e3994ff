mod common;

use common::{eval_bits, random_expr, random_literal, reparse};
use it2mof_core::parse;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn print_parse_is_a_fixpoint(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_expr(&mut rng, 5);
        let once = reparse(&e);
        prop_assert_eq!(&once, &e);
        prop_assert_eq!(once.to_string(), e.to_string());
    }

    #[test]
    fn reparsed_trees_evaluate_identically(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0, t in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_expr(&mut rng, 4);
        let env = [("a", a), ("b", b), ("t", t)];
        prop_assert_eq!(eval_bits(&reparse(&e), &env), eval_bits(&e, &env));
    }

    #[test]
    fn products_bind_tighter_than_sums(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3) {
        let env = [("a", a), ("b", b), ("c", c)];
        let ev = |s: &str| parse(s).unwrap().eval(&env).unwrap().to_bits();
        prop_assert_eq!(ev("a+b*c"), ev("a+(b*c)"));
        prop_assert_eq!(ev("a-b/c"), ev("a-(b/c)"));
    }

    #[test]
    fn powers_are_right_associative_and_beat_negation(a in 0.1f64..3.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let env = [("a", a), ("b", b), ("c", c)];
        let ev = |s: &str| parse(s).unwrap().eval(&env).map(f64::to_bits).ok();
        prop_assert_eq!(ev("a^b^c"), ev("a^(b^c)"));
        prop_assert_eq!(ev("-a^b"), ev("-(a^b)"));
    }

    #[test]
    fn literals_survive_printing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_literal(&mut rng);
        let e = parse(&format!("{v:?}")).unwrap();
        prop_assert_eq!(e.as_constant().map(f64::to_bits), Some(v.to_bits()));
    }
}
