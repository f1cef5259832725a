//! Acceptance suite: runs every battery criterion at its stated tolerance
//! and prints one pass/fail line per criterion.

use vpme_core::battery;

fn assert_report(report: battery::CriterionReport) {
    println!("{}", report.line());
    assert!(
        report.pass,
        "criterion {} ({}) failed: {} [{:.2}s / budget {:.0}s]",
        report.index,
        report.name,
        report.detail,
        report.seconds,
        report.budget_seconds
    );
}

#[test]
fn acceptance_01_poisson_oracle() {
    assert_report(battery::criterion_poisson_oracle());
}

#[test]
fn acceptance_02_neutral_equilibrium() {
    assert_report(battery::criterion_neutral_equilibrium());
}

#[test]
fn acceptance_03_sign_and_mass() {
    assert_report(battery::criterion_sign_and_mass());
}

#[test]
fn acceptance_04_variational_optimality() {
    assert_report(battery::criterion_variational_optimality());
}

#[test]
fn acceptance_05_energy_conservation() {
    assert_report(battery::criterion_energy_conservation());
}

#[test]
fn acceptance_06_moment_envelope() {
    assert_report(battery::criterion_moment_envelope());
}

#[test]
fn acceptance_07_w2_solvers() {
    assert_report(battery::criterion_w2_solvers());
}

#[test]
fn acceptance_08_stability_envelope() {
    assert_report(battery::criterion_stability_envelope());
}

#[test]
fn acceptance_09_field_stability() {
    assert_report(battery::criterion_field_stability());
}

#[test]
fn acceptance_10_modulus_and_envelope() {
    assert_report(battery::criterion_modulus_and_envelope());
}
