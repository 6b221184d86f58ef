//! Shared helpers for the integration-test binaries.

// Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

pub mod oracle;

use cbfal::config::Overrides;
use cbfal::integrator::{SimOutcome, SimRecord};
use cbfal::report::Report;
use cbfal::scenarios::{self, Scenario};

/// Builds a registered scenario from `key=value` override strings, panicking
/// on any build error (the tests only use known-good configurations).
pub fn scenario(name: &str, set: &[&str]) -> Scenario {
    let overrides = Overrides::from_set_args(set.iter().copied())
        .unwrap_or_else(|e| panic!("override parse for {name}: {e}"));
    scenarios::build(name, &overrides).unwrap_or_else(|e| panic!("build {name}: {e}"))
}

/// Runs a scenario and its check suite in one call.
pub fn run_and_check(name: &str, set: &[&str]) -> (SimOutcome, Report) {
    scenario(name, set)
        .run_and_check()
        .unwrap_or_else(|e| panic!("run {name}: {e}"))
}

/// Record at time `t`, matched to within half a default step.
pub fn record_at(outcome: &SimOutcome, t: f64) -> &SimRecord {
    outcome
        .records
        .iter()
        .find(|r| (r.t - t).abs() <= 5e-4)
        .unwrap_or_else(|| panic!("no record near t = {t}"))
}

/// Minimum of a per-record diagnostic over the whole run.
pub fn min_over_records(outcome: &SimOutcome, f: impl Fn(&SimRecord) -> Option<f64>) -> f64 {
    outcome
        .records
        .iter()
        .filter_map(f)
        .fold(f64::INFINITY, f64::min)
}

/// Prints the one-line verdict for an acceptance criterion.
pub fn criterion_line(id: u32, label: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:02} {label}: {detail}");
}
