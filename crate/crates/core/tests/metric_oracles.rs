//! Every metric against a naive per-example recount on 100 seeded random
//! fixtures, exact to 1e-9.

mod common;

#[test]
fn metrics_match_brute_force_recount() {
    for seed in 0..100 {
        common::oracles::check_all(seed);
    }
}
