//! Backward pass against central finite differences in f64.

use std::time::Instant;

use efanet::autodiff::gradcheck::{check, composite_cases, op_cases};

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences() {
    let start = Instant::now();
    for seed in [0, 1] {
        for case in op_cases(seed) {
            let r = check(&case, H).unwrap();
            assert!(r.max_rel_err < TOL, "{} (seed {seed}): max rel err {:.3e}", r.name, r.max_rel_err);
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn composite_graphs_match_finite_differences() {
    for seed in [3, 4] {
        for case in composite_cases(seed) {
            let r = check(&case, H).unwrap();
            assert!(r.checked > 0);
            assert!(r.max_rel_err < TOL, "{} (seed {seed}): max rel err {:.3e}", r.name, r.max_rel_err);
        }
    }
}
