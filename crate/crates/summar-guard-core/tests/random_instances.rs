mod common;

use common::criteria::{criterion_6, soundness};
use common::random::{check_gsum, check_monotone, check_sum, Instance};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn sum_properties_survive_reaggregation(seed in any::<u64>()) {
        let inst = Instance::generate(seed);
        let bad = check_sum(&inst);
        prop_assert!(bad.is_empty(), "{:#?}\n{:#?}", bad, inst.steps);
    }

    #[test]
    fn gsum_properties_match_their_source(seed in any::<u64>()) {
        let inst = Instance::generate(seed);
        let bad = check_gsum(&inst);
        prop_assert!(bad.is_empty(), "{:#?}\n{:#?}", bad, inst.steps);
    }

    #[test]
    fn modes_are_nested(seed in any::<u64>()) {
        let inst = Instance::generate(seed);
        let bad = check_monotone(&inst);
        prop_assert!(bad.is_empty(), "{:#?}", bad);
    }
}

#[test]
#[ignore]
fn dump_seed() {
    let seed: u64 = std::env::var("SEED").expect("SEED").parse().unwrap();
    let inst = Instance::generate(seed);
    for m in common::random::MODES {
        println!("##### {m}\n{}", common::random::dump(&inst, m));
    }
    println!("{:#?}\n{:#?}", check_gsum(&inst), check_monotone(&inst));
}

/// Seeds that once exposed unsound propagation rules.
#[test]
fn past_counterexamples_stay_fixed() {
    for seed in [2, 7, 11, 43, 48, 1811, 2984543884474070054, 18051010533435244787] {
        let inst = Instance::generate(seed);
        assert!(check_sum(&inst).is_empty(), "seed {seed}");
        assert!(check_gsum(&inst).is_empty(), "seed {seed}");
        assert!(check_monotone(&inst).is_empty(), "seed {seed}");
    }
}

#[test]
fn five_hundred_instances_without_counterexample() {
    if let Err(e) = criterion_6() {
        panic!("{e}");
    }
}

#[test]
fn another_batch_without_counterexample() {
    let (n, _) = soundness(100, 50_000).unwrap();
    assert_eq!(n, 100);
}
