mod common;

use common::*;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, err) in primitive_checks() {
        assert!(err < GRAD_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn miniature_network_matches_finite_differences() {
    for (name, err) in network_check(11) {
        assert!(err < GRAD_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn relative_error_definition() {
    assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
}
