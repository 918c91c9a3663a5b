//! Release gate: the twelve acceptance criteria at their stated tolerances.

use repinv_core::checks::acceptance;

#[test]
fn acceptance_criteria() {
    let results = acceptance(20260101);
    for (k, r) in results.iter().enumerate() {
        println!("criterion {:>2}: {r}", k + 1);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
