use repinv_core::checks::{run_suite, SUITES};

#[test]
fn every_named_suite_passes() {
    for name in SUITES {
        for r in run_suite(name, 11).unwrap() {
            println!("{name:>11}: {r}");
            assert!(r.passed, "{r}");
        }
    }
}

#[test]
fn seeds_are_reproducible() {
    assert_eq!(run_suite("ex6", 3).unwrap(), run_suite("ex6", 3).unwrap());
}
