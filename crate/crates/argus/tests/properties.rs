//! Randomized invariants, 1000 cases per family. Bodies live in
//! `support/families.rs` so the acceptance gate can run the same checks.

#[path = "support/families.rs"]
mod families;

const CASES: u32 = 1000;

#[test]
fn record_structure_invariants() {
    families::record_structure_invariants(CASES).unwrap();
}

#[test]
fn same_seed_replays_identically() {
    families::same_seed_replays_identically(CASES).unwrap();
}

#[test]
fn transient_errors_are_fully_corrected() {
    families::transient_errors_are_fully_corrected(CASES).unwrap();
}

#[test]
fn degradation_bound_algebra() {
    families::degradation_bound_algebra(CASES).unwrap();
}

#[test]
fn ensemble_metrics_are_count_based() {
    families::ensemble_metrics_are_count_based(CASES).unwrap();
}

#[test]
fn reflection_window_keeps_the_recent_tail() {
    families::reflection_window_keeps_the_recent_tail(CASES).unwrap();
}
