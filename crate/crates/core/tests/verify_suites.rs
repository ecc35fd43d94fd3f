//! Run every self-verification suite as part of the test battery.

use dustlab_core::verify::{run_suite, SUITES};

fn assert_suite(name: &str) {
    let report = run_suite(name).unwrap();
    print!("{}", report.format());
    assert!(report.passed(), "suite {name} failed: {:?}", report.first_failure());
}

#[test]
fn suite_wavelet() {
    assert_suite("wavelet");
}

#[test]
fn suite_tensor_ops() {
    assert_suite("tensor-ops");
}

#[test]
fn suite_attention() {
    assert_suite("attention");
}

#[test]
fn suite_blocks() {
    assert_suite("blocks");
}

#[test]
fn suite_objectives() {
    assert_suite("objectives");
}

#[test]
fn suite_model() {
    assert_suite("model");
}

#[test]
fn unknown_suite_is_config_error() {
    assert!(run_suite("nonsense").is_err());
    assert_eq!(SUITES.len(), 6);
}
