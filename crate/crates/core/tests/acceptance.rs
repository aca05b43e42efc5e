//! One test per acceptance criterion; each prints its PASS/FAIL line.

use landau_dpp::acceptance::{run_criterion, DEFAULT_SEED};

fn check(id: u8) {
    let outcome = run_criterion(id, DEFAULT_SEED);
    println!("{outcome}");
    assert!(outcome.passed, "criterion {id} failed");
}

#[test]
fn criterion_01_laguerre_identities() {
    check(1);
}

#[test]
fn criterion_02_closed_forms() {
    check(2);
}

#[test]
fn criterion_03_law_equivalence() {
    check(3);
}

#[test]
fn criterion_04_flat_intensity() {
    check(4);
}

#[test]
fn criterion_05_variance_asymptotics() {
    check(5);
}

#[test]
fn criterion_06_torus_clustering() {
    check(6);
}

#[test]
fn criterion_07_decay_scaling() {
    check(7);
}

#[test]
fn criterion_08_torus_lln() {
    check(8);
}

#[test]
fn criterion_09_flat_clt() {
    check(9);
}

#[test]
fn criterion_10_rigidity() {
    check(10);
}
