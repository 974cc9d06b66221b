mod common;

use common::{blink_reports, dlt_reports, field_reports, fine_loss_reports, vae_reports, PROBES};

fn assert_reports(reports: Vec<(&'static str, talkfield::nn::gradcheck::GradCheckReport)>) {
    for (name, r) in reports {
        let required = if name == "dlt blink input" { 4 } else { PROBES };
        assert!(r.passed(required), "{name}: {} probes, failures {:?}", r.probes, r.failures);
    }
}

#[test]
fn dlt_matches_finite_differences() {
    assert_reports(dlt_reports(11));
}

#[test]
fn vae_matches_finite_differences() {
    assert_reports(vae_reports(12));
}

#[test]
fn field_matches_finite_differences() {
    assert_reports(field_reports(13));
}

#[test]
fn blink_matches_finite_differences() {
    assert_reports(blink_reports(14));
}

#[test]
fn fine_loss_matches_finite_differences() {
    assert_reports(fine_loss_reports(15));
}
