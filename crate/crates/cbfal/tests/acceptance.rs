//! Acceptance sweep: one test per release criterion, each printing a single
//! `[PASS]`/`[FAIL]` verdict line (run with `--nocapture` to see the lines
//! for passing tests) and asserting the criterion at its stated tolerance.
//!
//! The verdicts are computed directly from simulation records and the frozen
//! constants in `common::oracle`, independently of the scenario check suite;
//! where a scenario ships the same check the report is asserted as well, so
//! a disagreement between the two paths also fails.

mod common;

use std::sync::OnceLock;

use cbfal::functionals::RelativeDegree;
use cbfal::integrator::{locate_switch, Termination};
use cbfal::scenarios::convergence_study;
use cbfal::verify::{self, VerifyConfig, VerifyReport};
use common::oracle;

// ─── shared verification run ───

/// One full verification pass at the default budget (seed 12345, 1000
/// randomized filter cases), shared by the criteria that assert individual
/// sections of it.
fn verify_report() -> &'static VerifyReport {
    static REPORT: OnceLock<VerifyReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        verify::run(&VerifyConfig::default()).expect("verification run is infallible on defaults")
    })
}

fn section_passes(name: &str) -> (bool, String) {
    let report = verify_report();
    let section = report
        .sections
        .iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("verification section {name} missing"));
    let pass = section.checks.iter().all(|c| c.pass);
    let detail = section
        .checks
        .iter()
        .map(|c| format!("{}={}", c.name, if c.pass { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, detail)
}

// ─── criteria ───

#[test]
fn criterion_01_closed_form_filter_matches_projection_oracle() {
    let report = verify_report();
    assert_eq!(report.cases, 1000, "randomized budget is pinned at 1000");
    let (pass, detail) = section_passes("filter-kkt");
    common::criterion_line(1, "kkt-oracle-equivalence", pass, &detail);
    assert!(pass, "closed-form filter vs projection oracle: {detail}");
}

#[test]
fn criterion_02_uncontrolled_scalar_analytics() {
    let (outcome, report) = common::run_and_check("case1", &["filter.enabled=false"]);

    let x2 = common::record_at(&outcome, 2.0).x[0];
    let x2_err = (x2 - oracle::X_AT_2).abs();

    let first_unsafe = outcome
        .records
        .iter()
        .find(|r| r.h.is_some_and(|h| h < 0.0))
        .map(|r| r.t)
        .expect("open loop must leave the safe set");
    let unsafe_err = (first_unsafe - oracle::FIRST_UNSAFE_TIME).abs();

    let escape = match outcome.termination {
        Termination::NonFiniteState { t } => t,
        ref other => panic!("open loop must escape in finite time, got {other:?}"),
    };
    let (esc_lo, esc_hi) = oracle::ESCAPE_WINDOW;

    let pass = x2_err <= oracle::X_AT_2_TOL
        && unsafe_err <= oracle::FIRST_UNSAFE_TOL
        && esc_lo < escape
        && escape < esc_hi
        && report.pass;
    let detail = format!(
        "|x(2) - 2/3| = {x2_err:.3e}, first H<0 at {first_unsafe:.4} \
         (analytic {}), escape at {escape:.4} (analytic {})",
        oracle::FIRST_UNSAFE_TIME,
        oracle::ESCAPE_TIME,
    );
    common::criterion_line(2, "uncontrolled-scalar-analytics", pass, &detail);
    assert!(pass, "{detail}; scenario report pass = {}", report.pass);
}

#[test]
fn criterion_03_filtered_scalar_invariance_and_switch() {
    let (outcome, report) = common::run_and_check("case1", &[]);
    let sc = common::scenario("case1", &[]);

    let min_h = common::min_over_records(&outcome, |r| r.h);
    let terminal = outcome.records.last().expect("records").x[0];

    let events = locate_switch(sc.plant(), sc.filter().expect("filtered"), &outcome)
        .expect("switch localization");
    let switch = events
        .iter()
        .find(|e| e.engaged)
        .map(|e| e.t)
        .expect("the filter must engage");
    let switch_err = (switch - oracle::SWITCH_TIME).abs();

    // Comparison bound H(t) >= H0 e^{-t} - 1e-5 at every record.
    let comparison_ok = outcome
        .records
        .iter()
        .all(|r| r.h.is_none_or(|h| h >= oracle::H0 * (-r.t).exp() - 1e-5));

    let pass = min_h >= -1e-6
        && switch_err <= oracle::SWITCH_TIME_TOL
        && (0.99..=1.0).contains(&terminal)
        && comparison_ok
        && report.pass;
    let detail = format!(
        "min H = {min_h:.3e} (>= -1e-6), switch at {switch:.6} (analytic {}), \
         x(50) = {terminal:.6}, comparison bound {}",
        oracle::SWITCH_TIME,
        if comparison_ok { "holds" } else { "VIOLATED" },
    );
    common::criterion_line(3, "filtered-scalar-invariance", pass, &detail);
    assert!(pass, "{detail}; scenario report pass = {}", report.pass);
}

#[test]
fn criterion_04_neutral_closed_loop_invariance() {
    let (coarse, report) = common::run_and_check("case2", &[]);
    let min_coarse = common::min_over_records(&coarse, |r| r.h);

    let fine = common::scenario("case2", &["dt=5e-4"])
        .run()
        .expect("half-step run");
    let min_fine = common::min_over_records(&fine, |r| r.h);

    // Halving dt must not worsen the boundary violation by more than a
    // factor of two; the 1e-15 floor absorbs roundoff when a violation is
    // exactly zero at one step size.
    let violation_coarse = (-min_coarse).max(0.0);
    let violation_fine = (-min_fine).max(0.0);
    let halving_ok = violation_fine <= 2.0 * violation_coarse + 1e-15;

    let pass = min_coarse >= -1e-5 && halving_ok && report.pass;
    let detail = format!(
        "min H = {min_coarse:.3e} at dt = 1e-3 (>= -1e-5), \
         {min_fine:.3e} at dt = 5e-4 (violation ratio bounded by 2)"
    );
    common::criterion_line(4, "neutral-closed-loop-invariance", pass, &detail);
    assert!(pass, "{detail}; scenario report pass = {}", report.pass);
}

#[test]
fn criterion_05_extended_filter_moving_average() {
    let (outcome, report) = common::run_and_check("case3", &[]);

    let min_h = common::min_over_records(&outcome, |r| r.h);
    let min_he = common::min_over_records(&outcome, |r| r.he);
    // The averaged barrier is H = 1 - (moving average of x^2), so the
    // average stays <= 1 + tol exactly when H >= -tol.
    let max_avg = 1.0 - min_h;
    let peak = outcome
        .records
        .iter()
        .map(|r| r.x[0])
        .fold(f64::NEG_INFINITY, f64::max);

    let pass = min_h >= -1e-5 && min_he >= -1e-5 && max_avg <= 1.0 + 1e-5 && report.pass;
    let detail = format!(
        "min H = {min_h:.3e}, min He = {min_he:.3e} (both >= -1e-5), \
         moving average <= {max_avg:.8}, peak state {peak:.4}"
    );
    common::criterion_line(5, "extended-filter-moving-average", pass, &detail);
    assert!(pass, "{detail}; scenario report pass = {}", report.pass);
}

#[test]
fn criterion_06_undefined_degree_guard() {
    let sc = common::scenario("case4", &[]);
    let degree = sc.classify().expect("case4 carries a functional");
    let classified = degree == RelativeDegree::InvalidNoDegree;

    let report = sc.demonstrate().expect("demonstration report");
    let refused_run = sc.run().is_err();

    let pass = classified && report.pass && refused_run;
    let detail = format!(
        "classification = {degree:?}, extension guard {}, simulation refused = {refused_run}",
        if report.pass { "raised" } else { "MISSED" },
    );
    common::criterion_line(6, "undefined-degree-guard", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_07_predator_prey_two_phase() {
    let (outcome, report) = common::run_and_check("predator_prey", &[]);

    // Phase one is open loop; the witness must appear before activation.
    let witness = outcome
        .records
        .iter()
        .find(|r| r.h.is_some_and(|h| h < 0.0))
        .map(|r| r.t)
        .expect("unsafe excursion before activation");

    // Invariance and prey band from the first recorded re-entry after the
    // controller engages at t = 100.
    let entry = outcome
        .records
        .iter()
        .position(|r| r.t >= 100.0 && r.h.is_some_and(|h| h >= 0.0))
        .expect("trajectory re-enters the safe set");
    let after = &outcome.records[entry..];
    let min_h_after = after
        .iter()
        .filter_map(|r| r.h)
        .fold(f64::INFINITY, f64::min);
    let (band_lo, band_hi) = oracle::PREY_BAND;
    let band_ok = after
        .iter()
        .all(|r| r.x[0] >= band_lo - 1e-4 && r.x[0] <= band_hi + 1e-4);

    // Minimal intervention: u = 0 exactly on a positive-measure set.
    let idle = after
        .iter()
        .filter(|r| r.u.iter().all(|&v| v == 0.0))
        .count();

    let pass = witness <= 100.0 && min_h_after >= -1e-4 && band_ok && idle > 0 && report.pass;
    let detail = format!(
        "witness H<0 at t = {witness:.2}, min H after re-entry = {min_h_after:.3e} \
         (>= -1e-4), prey band {}, idle records after activation = {idle}/{}",
        if band_ok { "held" } else { "LEFT" },
        after.len(),
    );
    common::criterion_line(7, "predator-prey-two-phase", pass, &detail);
    assert!(pass, "{detail}; scenario report pass = {}", report.pass);
}

#[test]
fn criterion_08_derivative_assembly_matches_finite_differences() {
    let (pass, detail) = section_passes("derivative-fd");
    common::criterion_line(8, "derivative-fd-oracle", pass, &detail);
    assert!(pass, "assembled Hdot vs central differences: {detail}");
}

#[test]
fn criterion_09_integration_by_parts_identity() {
    let (pass, detail) = section_passes("ibp-identity");
    common::criterion_line(9, "integration-by-parts", pass, &detail);
    assert!(pass, "integration-by-parts identity: {detail}");
}

#[test]
fn criterion_10_convergence_order() {
    let study = convergence_study("case1", &scenarios_default(), &[4e-3, 2e-3, 1e-3])
        .expect("convergence ladder");
    let order = study.min_order().expect("three rungs give an order");
    let diffs: Vec<String> = study.errors.iter().map(|e| format!("{e:.3e}")).collect();

    let pass = order >= 2.0;
    let detail = format!(
        "observed order {order:.3} across dt = {{4e-3, 2e-3, 1e-3}}, \
         terminal diffs [{}]",
        diffs.join(", "),
    );
    common::criterion_line(10, "convergence-order", pass, &detail);
    // Known to fail: the filter activates at t = 17/8 exactly, which sits at
    // fractional grid phase 0.25 / 0.5 / 0 across the ladder. A fixed step
    // that straddles the activation kink commits an O(dt^2) error whose
    // phase factors at 0.25 and 0.5 have equal magnitude and opposite sign,
    // so the consecutive terminal differences land in ratio 2 and the
    // Richardson estimate is pinned at first order. On any ladder whose
    // grids all contain 17/8 the differences collapse to roundoff instead.
    assert!(
        pass,
        "{detail}: the activation kink at t = 2.125 is a grid point only for \
         the finest rung, and the straddling-step error phases align to a \
         difference ratio of 2"
    );
}

fn scenarios_default() -> cbfal::config::Overrides {
    cbfal::config::Overrides::new()
}
