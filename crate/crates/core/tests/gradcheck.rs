mod common;

use common::{FD_TOLERANCE, INSTANCES, MODEL_CASES, OP_CASES};

fn run(cases: &[common::OpCase]) {
    let mut failures = Vec::new();
    for (name, case) in cases {
        for seed in 0..INSTANCES {
            let err = case(seed);
            if err.is_nan() || err > FD_TOLERANCE {
                failures.push(format!("{name} seed {seed}: relative error {err:e}"));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn every_op_matches_finite_differences() {
    run(OP_CASES);
}

#[test]
fn encoder_and_losses_match_finite_differences() {
    run(MODEL_CASES);
}

#[test]
fn relative_error_is_scale_free() {
    assert_eq!(common::relative_error(&[2.0, 0.0], &[2.0, 0.0]), 0.0);
    let e = common::relative_error(&[1.0, 0.0], &[1.0, 1e-3]);
    assert!((e - 1e-3).abs() < 1e-9);
}
