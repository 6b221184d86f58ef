//! Built-in scenarios: plants, barrier functionals, filters, and the checks
//! each run is judged against.
//!
//! Four scalar case studies share the plant `xdot = x^3 + x(t - tau) u` and
//! differ in the functional:
//!
//! * `case1`: state constraint `H = 1 - x^2`, relative degree one.
//! * `case2`: `H = 1 - (x^2(t) + x^2(t - tau)) / 2`; the point weight makes
//!   the closed loop neutral while the plant stays retarded.
//! * `case3`: moving average `H = 1 - (1/tau) int_{-tau}^{0} x^2`, relative
//!   degree two, handled by the extended filter.
//! * `case4`: `H = 1 + x^2(t - tau) / 2 - (1/tau) int_{-tau}^{0} x^2`, a
//!   structural demonstration that a lone point weight admits no relative
//!   degree; it is classified and rejected, never simulated.
//!
//! `predator_prey` is a two-state delayed predator-prey system keeping the
//! prey population inside a band via the extended filter, switched on only
//! mid-run.
//!
//! Scenario parameters are plain defaults layered with [`Overrides`];
//! unknown keys are rejected so misspelled parameters cannot silently run
//! the defaults.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::config::{OverrideValue, Overrides};
use crate::functionals::{
    classify_relative_degree, extend, CbfalSpec, ClassKeFn, DistributedWeight, EvalCtx, Functional,
    RelativeDegree,
};
use crate::history::InitialHistory;
use crate::integrator::{
    locate_switch, simulate, ControlAffinePlant, ControlMode, SimConfig, SimOutcome, Termination,
};
use crate::report::{CheckResult, Report};
use crate::safety_filter::{FilterMode, FilterSpec};
use crate::{Error, NotExtendableReason, Result};

/// Names accepted by [`build`], in presentation order.
pub const SCENARIOS: &[&str] = &["case1", "case2", "case3", "case4", "predator_prey"];

// ─── checks ──────────────────────────────────────────────────────────────────

/// One named acceptance check evaluated against a finished run.
#[derive(Debug, Clone)]
enum Check {
    /// The run reached `t_end`.
    Completed,
    /// The run escaped in finite time strictly inside `(lo, hi)`.
    EscapeWindow { lo: f64, hi: f64 },
    /// `x[component]` at the record nearest `t` matches `expected`.
    StateAtTime {
        t: f64,
        component: usize,
        expected: f64,
        tol: f64,
    },
    /// The first record with `H < 0` sits at `expected`.
    FirstUnsafeTime { expected: f64, tol: f64 },
    /// `min H` over all records stays above `-tol`.
    MinH { tol: f64 },
    /// `min He` over all records stays above `-tol`.
    MinHe { tol: f64 },
    /// The moving average `1 - H` never exceeds `1 + tol` (case3 reading).
    MovingAverage { tol: f64 },
    /// The first filter engagement, bisected on the switching surface.
    SwitchTime { expected: f64, tol: f64 },
    /// Terminal `x[component]` lies in `[lo, hi]`.
    TerminalRange { component: usize, lo: f64, hi: f64 },
    /// `H(t) >= H(0) e^{-gamma t} - tol` at every record.
    ComparisonH { gamma: f64, tol: f64 },
    /// `He(t) >= He(0) e^{-gamma_e t} - tol` at every record with `He`.
    ComparisonHe { gamma_e: f64, tol: f64 },
    /// `active` agrees with the sign of `phi`, and the control is exactly
    /// the desired (zero) control whenever the constraint is slack.
    BranchConsistency,
    /// The plant field vanishes on the constant history at `eq`.
    EquilibriumResidual { eq: DVector<f64>, tol: f64 },
    /// Some record with `t <= before` has `H < 0`.
    UnsafeWitness { before: f64 },
    /// From the first record with `t >= entry_after` and `H >= 0` onwards,
    /// `H >= -tol`.
    InvarianceAfterEntry { entry_after: f64, tol: f64 },
    /// From the same entry point, `x[component]` stays in `[lo-tol, hi+tol]`.
    RangeAfterEntry {
        entry_after: f64,
        component: usize,
        lo: f64,
        hi: f64,
        tol: f64,
    },
    /// At least `fraction` of the records with `t >= after` carry `u = 0`
    /// exactly: the filter intervenes only where needed.
    MinimalIntervention { after: f64, fraction: f64 },
    /// `max_t |x(t) - x(0)|_inf` stays below `tol`.
    StaysNearStart { tol: f64 },
}

/// Index of the first record at or after `entry_after` whose `H` is
/// nonnegative.
fn entry_index(outcome: &SimOutcome, entry_after: f64) -> Option<usize> {
    outcome
        .records
        .iter()
        .position(|r| r.t >= entry_after && r.h.is_some_and(|h| h >= 0.0))
}

impl Check {
    fn eval(&self, sc: &Scenario, outcome: &SimOutcome) -> CheckResult {
        match self {
            Check::Completed => CheckResult::flag(
                "completed",
                outcome.termination.is_completed(),
                format!("termination: {}", termination_text(&outcome.termination)),
            ),
            Check::EscapeWindow { lo, hi } => {
                match outcome.termination {
                    Termination::NonFiniteState { t } => {
                        let mut c = CheckResult::flag(
                        "finite-escape-window",
                        *lo < t && t < *hi,
                        format!("trajectory left f64 range at t = {t:.6} (expected in ({lo}, {hi}))"),
                    );
                        c.value = Some(t);
                        c
                    }
                    ref other => CheckResult::flag(
                        "finite-escape-window",
                        false,
                        format!(
                            "expected finite-time escape in ({lo}, {hi}), got {}",
                            termination_text(other)
                        ),
                    ),
                }
            }
            Check::StateAtTime {
                t,
                component,
                expected,
                tol,
            } => {
                let nearest = outcome
                    .records
                    .iter()
                    .min_by(|a, b| (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap())
                    .filter(|r| (r.t - t).abs() <= 0.5 * outcome.config.dt);
                match nearest {
                    Some(r) => CheckResult::within(
                        "state-at-time",
                        r.x[*component],
                        *expected,
                        *tol,
                        format!("x[{component}] at t = {t}"),
                    ),
                    None => CheckResult::flag(
                        "state-at-time",
                        false,
                        format!("no record at t = {t} (run ended early?)"),
                    ),
                }
            }
            Check::FirstUnsafeTime { expected, tol } => {
                let first = outcome
                    .records
                    .iter()
                    .find(|r| r.h.is_some_and(|h| h < 0.0));
                match first {
                    Some(r) => CheckResult::within(
                        "first-unsafe-time",
                        r.t,
                        *expected,
                        *tol,
                        "first record with H < 0",
                    ),
                    None => CheckResult::flag(
                        "first-unsafe-time",
                        false,
                        "H never went negative".to_string(),
                    ),
                }
            }
            Check::MinH { tol } => match min_over(outcome, |r| r.h) {
                Some((v, t)) => CheckResult::ge(
                    "min-h",
                    v,
                    -tol,
                    format!("minimum H over the run (at t = {t:.4})"),
                ),
                None => CheckResult::flag("min-h", false, "no H recorded".to_string()),
            },
            Check::MinHe { tol } => match min_over(outcome, |r| r.he) {
                Some((v, t)) => CheckResult::ge(
                    "min-he",
                    v,
                    -tol,
                    format!("minimum He over the run (at t = {t:.4})"),
                ),
                None => CheckResult::flag("min-he", false, "no He recorded".to_string()),
            },
            Check::MovingAverage { tol } => match min_over(outcome, |r| r.h) {
                // H = 1 - average, so the largest average is 1 - min H.
                Some((v, t)) => CheckResult::le(
                    "moving-average",
                    1.0 - v,
                    1.0 + tol,
                    format!("maximum moving average of x^2 (at t = {t:.4})"),
                ),
                None => CheckResult::flag("moving-average", false, "no H recorded".to_string()),
            },
            Check::SwitchTime { expected, tol } => match self.switches(sc, outcome) {
                Err(e) => CheckResult::flag("switch-time", false, format!("{e}")),
                Ok(events) => match events.iter().find(|e| e.engaged) {
                    Some(e) => CheckResult::within(
                        "switch-time",
                        e.t,
                        *expected,
                        *tol,
                        "first filter engagement",
                    ),
                    None => CheckResult::flag(
                        "switch-time",
                        false,
                        "the filter never engaged".to_string(),
                    ),
                },
            },
            Check::TerminalRange { component, lo, hi } => match outcome.records.last() {
                Some(r) => {
                    let v = r.x[*component];
                    let mut c = CheckResult::flag(
                        "terminal-range",
                        (*lo..=*hi).contains(&v),
                        format!(
                            "x[{component}]({:.3}) = {v:.9}, expected in [{lo}, {hi}]",
                            r.t
                        ),
                    );
                    c.value = Some(v);
                    c
                }
                None => CheckResult::flag("terminal-range", false, "no records".to_string()),
            },
            Check::ComparisonH { gamma, tol } => {
                comparison_margin("comparison-h", outcome, |r| r.h, sc.h0, *gamma, *tol)
            }
            Check::ComparisonHe { gamma_e, tol } => {
                comparison_margin("comparison-he", outcome, |r| r.he, sc.he0, *gamma_e, *tol)
            }
            Check::BranchConsistency => {
                let mut violations = 0usize;
                for r in &outcome.records {
                    let (Some(phi), Some(active)) = (r.phi, r.active) else {
                        continue;
                    };
                    if active != (phi < 0.0) {
                        violations += 1;
                    }
                    if !active && r.u.iter().any(|v| *v != 0.0) {
                        violations += 1;
                    }
                }
                CheckResult::le(
                    "branch-consistency",
                    violations as f64,
                    0.0,
                    "records where `active` disagrees with sign(phi) or a slack \
                     constraint produced a nonzero control",
                )
            }
            Check::EquilibriumResidual { eq, tol } => {
                match equilibrium_residual(&sc.plant, eq, &sc.config) {
                    Ok(res) => CheckResult::le(
                        "equilibrium-residual",
                        res,
                        *tol,
                        "max |F| on the constant equilibrium history",
                    ),
                    Err(e) => CheckResult::flag("equilibrium-residual", false, format!("{e}")),
                }
            }
            Check::UnsafeWitness { before } => {
                let witness = outcome
                    .records
                    .iter()
                    .find(|r| r.t <= *before && r.h.is_some_and(|h| h < 0.0));
                match witness {
                    Some(r) => {
                        let mut c = CheckResult::flag(
                            "unsafe-witness",
                            true,
                            format!(
                                "H = {:.6} < 0 at t = {:.4} (within [0, {before}])",
                                r.h.unwrap(),
                                r.t
                            ),
                        );
                        c.value = Some(r.t);
                        c
                    }
                    None => CheckResult::flag(
                        "unsafe-witness",
                        false,
                        format!("H never went negative before t = {before}"),
                    ),
                }
            }
            Check::InvarianceAfterEntry { entry_after, tol } => {
                match entry_index(outcome, *entry_after) {
                    Some(i) => {
                        let (v, t) = outcome.records[i..]
                            .iter()
                            .filter_map(|r| r.h.map(|h| (h, r.t)))
                            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                            .unwrap();
                        CheckResult::ge(
                            "invariance-after-entry",
                            v,
                            -tol,
                            format!(
                                "min H from re-entry at t = {:.4} (worst at t = {t:.4})",
                                outcome.records[i].t
                            ),
                        )
                    }
                    None => CheckResult::flag(
                        "invariance-after-entry",
                        false,
                        format!("H never reached 0 after t = {entry_after}"),
                    ),
                }
            }
            Check::RangeAfterEntry {
                entry_after,
                component,
                lo,
                hi,
                tol,
            } => match entry_index(outcome, *entry_after) {
                Some(i) => {
                    let worst = outcome.records[i..]
                        .iter()
                        .map(|r| {
                            let v = r.x[*component];
                            (lo - v).max(v - hi)
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    CheckResult::le(
                        "range-after-entry",
                        worst,
                        *tol,
                        format!(
                            "worst excursion of x[{component}] outside [{lo}, {hi}] after re-entry"
                        ),
                    )
                }
                None => CheckResult::flag(
                    "range-after-entry",
                    false,
                    format!("H never reached 0 after t = {entry_after}"),
                ),
            },
            Check::MinimalIntervention { after, fraction } => {
                let post: Vec<_> = outcome.records.iter().filter(|r| r.t >= *after).collect();
                if post.is_empty() {
                    return CheckResult::flag(
                        "minimal-intervention",
                        false,
                        format!("no records after t = {after}"),
                    );
                }
                let idle = post
                    .iter()
                    .filter(|r| r.u.iter().all(|v| *v == 0.0))
                    .count();
                CheckResult::ge(
                    "minimal-intervention",
                    idle as f64 / post.len() as f64,
                    *fraction,
                    format!(
                        "fraction of records after t = {after} with u = 0 exactly \
                         ({idle}/{} records)",
                        post.len()
                    ),
                )
            }
            Check::StaysNearStart { tol } => match outcome.records.first() {
                Some(first) => {
                    let worst = outcome
                        .records
                        .iter()
                        .map(|r| (&r.x - &first.x).amax())
                        .fold(0.0, f64::max);
                    CheckResult::le(
                        "stays-near-start",
                        worst,
                        *tol,
                        "max |x(t) - x(0)| over the run",
                    )
                }
                None => CheckResult::flag("stays-near-start", false, "no records".to_string()),
            },
        }
    }

    fn switches(
        &self,
        sc: &Scenario,
        outcome: &SimOutcome,
    ) -> Result<Vec<crate::integrator::SwitchEvent>> {
        let filter = sc.filter.as_ref().ok_or_else(|| Error::InvalidConfig {
            reason: "switch checks need a filtered run".into(),
        })?;
        locate_switch(&sc.plant, filter, outcome)
    }
}

fn termination_text(t: &Termination) -> String {
    match t {
        Termination::Completed => "completed".into(),
        Termination::NonFiniteState { t } => format!("non-finite state at t = {t:.6}"),
        Termination::DegenerateConstraint { t, phi, phi0_norm } => format!(
            "degenerate constraint at t = {t:.6} (phi = {phi:.3e}, |phi0| = {phi0_norm:.3e})"
        ),
    }
}

fn min_over(
    outcome: &SimOutcome,
    f: impl Fn(&crate::integrator::SimRecord) -> Option<f64>,
) -> Option<(f64, f64)> {
    outcome
        .records
        .iter()
        .filter_map(|r| f(r).map(|v| (v, r.t)))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
}

/// Worst margin of `value(t) - value0 e^{-gamma t}` over the records.
fn comparison_margin(
    name: &str,
    outcome: &SimOutcome,
    f: impl Fn(&crate::integrator::SimRecord) -> Option<f64>,
    value0: Option<f64>,
    gamma: f64,
    tol: f64,
) -> CheckResult {
    let Some(v0) = value0 else {
        return CheckResult::flag(name, false, "no initial value available".to_string());
    };
    let worst = outcome
        .records
        .iter()
        .filter_map(|r| f(r).map(|v| (v - v0 * (-gamma * r.t).exp(), r.t)))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    match worst {
        Some((m, t)) => CheckResult::ge(
            name,
            m,
            -tol,
            format!(
                "worst margin over the exponential comparison bound \
                 {v0:.6} e^(-{gamma} t) (at t = {t:.4})"
            ),
        ),
        None => CheckResult::flag(name, false, "no values recorded".to_string()),
    }
}

/// Max-norm of `F` on the constant history pinned at `eq`.
fn equilibrium_residual(
    plant: &ControlAffinePlant,
    eq: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<f64> {
    let init = InitialHistory::constant(eq.clone());
    let lag = plant.max_internal_lag().max(cfg.dt);
    let mut window =
        crate::history::HistoryWindow::with_initial_history(init, 0.0, lag, cfg.interp)?;
    window.set_grid_hint(cfg.dt);
    let ctx = EvalCtx::at(&window, 0.0).with_quadrature(cfg.quadrature);
    Ok(plant.eval_f(&ctx)?.amax())
}

// ─── scenario ────────────────────────────────────────────────────────────────

/// A fully wired scenario: plant, functional, filter, initial history,
/// simulation configuration, and the checks its report answers.
pub struct Scenario {
    name: String,
    description: String,
    plant: ControlAffinePlant,
    functional: Option<Functional>,
    filter: Option<FilterSpec>,
    initial: InitialHistory,
    config: SimConfig,
    checks: Vec<Check>,
    params: Overrides,
    demonstration: bool,
    /// `H` on the initial history, used by comparison-bound checks.
    h0: Option<f64>,
    /// `He` on the initial history for extended scenarios.
    he0: Option<f64>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn plant(&self) -> &ControlAffinePlant {
        &self.plant
    }

    pub fn functional(&self) -> Option<&Functional> {
        self.functional.as_ref()
    }

    pub fn filter(&self) -> Option<&FilterSpec> {
        self.filter.as_ref()
    }

    pub fn initial(&self) -> &InitialHistory {
        &self.initial
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Effective parameter set after overrides, for echoing into reports.
    pub fn params(&self) -> &Overrides {
        &self.params
    }

    /// True for structural demonstrations that are never simulated.
    pub fn is_demonstration(&self) -> bool {
        self.demonstration
    }

    pub fn initial_h(&self) -> Option<f64> {
        self.h0
    }

    pub fn initial_he(&self) -> Option<f64> {
        self.he0
    }

    /// `filtered`, `uncontrolled`, or `demonstration`.
    pub fn mode(&self) -> &'static str {
        if self.demonstration {
            "demonstration"
        } else if self.filter.is_some() {
            "filtered"
        } else {
            "uncontrolled"
        }
    }

    /// Relative degree of the attached functional along the plant.
    pub fn classify(&self) -> Option<RelativeDegree> {
        self.functional
            .as_ref()
            .map(|f| classify_relative_degree(f.spec(), &self.plant))
    }

    /// Runs the closed loop (or the open loop when no filter is attached).
    pub fn run(&self) -> Result<SimOutcome> {
        if self.demonstration {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "{} is a structural demonstration; use demonstrate() instead of run()",
                    self.name
                ),
            });
        }
        let mode = match &self.filter {
            Some(filter) => ControlMode::Filtered { filter },
            None => ControlMode::Uncontrolled {
                monitor: self.functional.as_ref(),
            },
        };
        simulate(&self.plant, mode, &self.initial, &self.config)
    }

    /// Evaluates every configured check against a finished run.
    pub fn run_checks(&self, outcome: &SimOutcome) -> Report {
        let mut report = Report::new(
            &self.name,
            self.mode(),
            termination_text(&outcome.termination),
        );
        for check in &self.checks {
            report.push(check.eval(self, outcome));
        }
        report
    }

    /// Convenience: run and check in one call.
    pub fn run_and_check(&self) -> Result<(SimOutcome, Report)> {
        let outcome = self.run()?;
        let report = self.run_checks(&outcome);
        Ok((outcome, report))
    }

    /// Structural demonstration for `case4`: classify the functional,
    /// attempt the extension, and report why it is rejected. Errors for
    /// simulable scenarios.
    pub fn demonstrate(&self) -> Result<Report> {
        if !self.demonstration {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "{} simulates; use run() instead of demonstrate()",
                    self.name
                ),
            });
        }
        let mut report = Report::new(&self.name, "demonstration", "not simulated");
        let degree = self.classify().expect("demonstration carries a functional");
        report.push(CheckResult::flag(
            "relative-degree",
            degree == RelativeDegree::InvalidNoDegree,
            format!("classified as {degree:?} (expected InvalidNoDegree)"),
        ));

        let tau = match self.params.get("tau") {
            Some(OverrideValue::Number(v)) => v,
            _ => unreachable!("case4 always records tau"),
        };
        let fresh = case4_spec(tau)?;
        let alpha = ClassKeFn::linear(1.0)?;
        let check = match extend(fresh, alpha) {
            Err(Error::NotExtendable {
                reason: NotExtendableReason::NonzeroPointWeight { lag },
            }) => CheckResult::flag(
                "extension-rejected",
                (lag - tau).abs() <= 1e-12 * tau,
                format!("extension rejected for the point weight at lag {lag}"),
            ),
            Err(e) => CheckResult::flag(
                "extension-rejected",
                false,
                format!("rejected for an unexpected reason: {e}"),
            ),
            Ok(_) => CheckResult::flag(
                "extension-rejected",
                false,
                "the extension unexpectedly succeeded".to_string(),
            ),
        };
        report.push(check);
        Ok(report)
    }
}

// ─── override plumbing ───────────────────────────────────────────────────────

/// Draining reader over a parsed override set; every key must be consumed.
struct OverrideMap(BTreeMap<String, OverrideValue>);

impl OverrideMap {
    fn new(ov: &Overrides) -> Self {
        Self(ov.clone().into_map())
    }

    fn number(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(OverrideValue::Number(v)) => Ok(v),
            Some(OverrideValue::Bool(_)) => Err(Error::InvalidOverride {
                key: key.into(),
                reason: "expected a number, got a boolean".into(),
            }),
        }
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.number(key, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidOverride {
                key: key.into(),
                reason: format!("must be positive and finite, got {v}"),
            })
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(OverrideValue::Bool(b)) => Ok(b),
            Some(OverrideValue::Number(_)) => Err(Error::InvalidOverride {
                key: key.into(),
                reason: "expected a boolean, got a number".into(),
            }),
        }
    }

    fn finish(self, scenario: &str) -> Result<()> {
        if let Some((key, _)) = self.0.into_iter().next() {
            return Err(Error::InvalidOverride {
                key,
                reason: format!("unknown key for scenario {scenario}"),
            });
        }
        Ok(())
    }
}

/// Common scalar-case knobs read from the override set.
struct ScalarKnobs {
    tau: f64,
    gamma: f64,
    x0: f64,
    dt: f64,
    t_end: f64,
    controller_on_at: f64,
    filtered: bool,
}

fn scalar_knobs(
    map: &mut OverrideMap,
    gamma_default: f64,
    t_end_default: f64,
) -> Result<ScalarKnobs> {
    Ok(ScalarKnobs {
        tau: map.positive("tau", 1.0)?,
        gamma: map.positive("gamma", gamma_default)?,
        x0: map.number("x0", 0.4)?,
        dt: map.positive("dt", 1e-3)?,
        t_end: map.positive("t_end", t_end_default)?,
        controller_on_at: map.number("controller_on_at", 0.0)?,
        filtered: map.bool("filter.enabled", true)?,
    })
}

fn echo_scalar(k: &ScalarKnobs) -> Overrides {
    let mut ov = Overrides::new();
    ov.set_number("tau", k.tau)
        .set_number("gamma", k.gamma)
        .set_number("x0", k.x0)
        .set_number("dt", k.dt)
        .set_number("t_end", k.t_end)
        .set_number("controller_on_at", k.controller_on_at)
        .set_bool("filter.enabled", k.filtered);
    ov
}

// ─── scalar case studies ─────────────────────────────────────────────────────

/// The shared scalar plant `xdot = x^3 + x(t - tau) u`.
fn scalar_plant(tau: f64) -> ControlAffinePlant {
    ControlAffinePlant::new(
        1,
        1,
        Box::new(|ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(DVector::from_element(1, x[0].powi(3)))
        }),
        Box::new(move |ctx| {
            let xd = ctx.state_at(-tau)?;
            Ok(DMatrix::from_element(1, 1, xd[0]))
        }),
    )
    .with_lags(vec![tau])
}

/// `H = 1 - x^2(t)`.
fn case1_spec() -> Result<CbfalSpec> {
    CbfalSpec::builder("case1")
        .value(Box::new(|ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(1.0 - x[0] * x[0])
        }))
        .w0(Box::new(|ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(RowDVector::from_element(1, -2.0 * x[0]))
        }))
        .build()
}

/// `H = 1 - (x^2(t) + x^2(t - tau)) / 2`; the point weight reads the delayed
/// state derivative, so the filtered loop is neutral.
fn case2_spec(tau: f64) -> Result<CbfalSpec> {
    CbfalSpec::builder("case2")
        .value(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            let xd = ctx.state_at(-tau)?;
            Ok(1.0 - 0.5 * (x[0] * x[0] + xd[0] * xd[0]))
        }))
        .w0(Box::new(|ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(RowDVector::from_element(1, -x[0]))
        }))
        .point_weight(
            tau,
            Box::new(move |ctx| {
                let xd = ctx.state_at(-tau)?;
                Ok(RowDVector::from_element(1, -xd[0]))
            }),
        )
        .build()
}

/// The distributed weight shared by case3 and case4:
/// `w_d(theta) = -(2/tau) x(t + theta)` on `[-tau, 0]`, with the
/// closed-form drift `(x^2(t - tau) - x^2(t)) / tau`.
fn average_weight(tau: f64) -> DistributedWeight {
    DistributedWeight::new(
        tau,
        0.0,
        Box::new(move |ctx, theta| {
            let x = ctx.state_at(theta)?;
            Ok(RowDVector::from_element(1, -(2.0 / tau) * x[0]))
        }),
    )
    // Total theta-derivative along the history, for integration-by-parts
    // cross-checks on committed data.
    .with_kernel_dtheta(Box::new(move |ctx, theta| {
        let xd = ctx.derivative_at(theta)?;
        Ok(RowDVector::from_element(1, -(2.0 / tau) * xd[0]))
    }))
    .with_closed_form(Box::new(move |ctx| {
        let x = ctx.state_at(0.0)?;
        let xd = ctx.state_at(-tau)?;
        Ok((xd[0] * xd[0] - x[0] * x[0]) / tau)
    }))
}

/// `H = 1 - (1/tau) int_{-tau}^{0} x^2`, with the drift decomposition
/// `L_F H = (x^2(t - tau) - x^2(t)) / tau` attached for the extension.
fn case3_spec(tau: f64) -> Result<CbfalSpec> {
    let lf = CbfalSpec::builder("case3-lf")
        .value(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            let xd = ctx.state_at(-tau)?;
            Ok((xd[0] * xd[0] - x[0] * x[0]) / tau)
        }))
        .w0(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(RowDVector::from_element(1, -(2.0 / tau) * x[0]))
        }))
        .point_weight(
            tau,
            Box::new(move |ctx| {
                let xd = ctx.state_at(-tau)?;
                Ok(RowDVector::from_element(1, (2.0 / tau) * xd[0]))
            }),
        )
        .build()?;
    CbfalSpec::builder("case3")
        .value(Box::new(move |ctx| {
            let avg = ctx.integrate_state(tau, 0.0, |_, x: &DVector<f64>| x[0] * x[0])?;
            Ok(1.0 - avg / tau)
        }))
        .distributed(average_weight(tau))
        .lf_decomposition(lf)
        .build()
}

/// `H = 1 + x^2(t - tau)/2 - (1/tau) int_{-tau}^{0} x^2`: the lag-zero
/// weight vanishes identically while the point weight does not, so no
/// relative degree exists and the extension must be rejected.
fn case4_spec(tau: f64) -> Result<CbfalSpec> {
    CbfalSpec::builder("case4")
        .value(Box::new(move |ctx| {
            let xd = ctx.state_at(-tau)?;
            let avg = ctx.integrate_state(tau, 0.0, |_, x: &DVector<f64>| x[0] * x[0])?;
            Ok(1.0 + 0.5 * xd[0] * xd[0] - avg / tau)
        }))
        .point_weight(
            tau,
            Box::new(move |ctx| {
                let xd = ctx.state_at(-tau)?;
                Ok(RowDVector::from_element(1, xd[0]))
            }),
        )
        .distributed(average_weight(tau))
        .build()
}

fn build_case1(overrides: &Overrides) -> Result<Scenario> {
    let mut map = OverrideMap::new(overrides);
    let k = scalar_knobs(&mut map, 1.0, 50.0)?;
    map.finish("case1")?;

    let plant = scalar_plant(k.tau);
    let spec = Arc::new(case1_spec()?);
    let functional = Functional::Standard(spec.clone());
    let filter = k
        .filtered
        .then(|| -> Result<FilterSpec> {
            Ok(FilterSpec::min_norm(
                FilterMode::Standard {
                    cbfal: spec.clone(),
                    alpha: ClassKeFn::linear(k.gamma)?,
                },
                1,
            ))
        })
        .transpose()?;

    let config = SimConfig {
        dt: k.dt,
        t_end: k.t_end,
        controller_on_at: k.controller_on_at,
        retain_history: k.filtered,
        ..SimConfig::default()
    };
    let checks = if k.filtered {
        vec![
            Check::Completed,
            Check::MinH { tol: 1e-6 },
            Check::SwitchTime {
                expected: 2.125,
                tol: 5e-3,
            },
            Check::TerminalRange {
                component: 0,
                lo: 0.99,
                hi: 1.0,
            },
            Check::ComparisonH {
                gamma: k.gamma,
                tol: 1e-5,
            },
            Check::BranchConsistency,
        ]
    } else {
        vec![
            Check::StateAtTime {
                t: 2.0,
                component: 0,
                expected: 2.0 / 3.0,
                tol: 1e-5,
            },
            Check::FirstUnsafeTime {
                expected: 2.625,
                tol: 0.01,
            },
            Check::EscapeWindow { lo: 3.0, hi: 3.2 },
        ]
    };

    let initial = InitialHistory::constant(DVector::from_element(1, k.x0));
    let (h0, he0) = initial_values(&plant, Some(&functional), &initial, &config)?;
    Ok(Scenario {
        name: "case1".into(),
        description: "scalar plant with a pure state constraint, degree one".into(),
        plant,
        functional: Some(functional),
        filter,
        initial,
        config,
        checks,
        params: echo_scalar(&k),
        demonstration: false,
        h0,
        he0,
    })
}

fn build_case2(overrides: &Overrides) -> Result<Scenario> {
    let mut map = OverrideMap::new(overrides);
    let k = scalar_knobs(&mut map, 1.0, 50.0)?;
    map.finish("case2")?;

    let plant = scalar_plant(k.tau);
    let spec = Arc::new(case2_spec(k.tau)?);
    let functional = Functional::Standard(spec.clone());
    let filter = k
        .filtered
        .then(|| -> Result<FilterSpec> {
            Ok(FilterSpec::min_norm(
                FilterMode::Standard {
                    cbfal: spec.clone(),
                    alpha: ClassKeFn::linear(k.gamma)?,
                },
                1,
            ))
        })
        .transpose()?;

    let config = SimConfig {
        dt: k.dt,
        t_end: k.t_end,
        controller_on_at: k.controller_on_at,
        ..SimConfig::default()
    };
    let checks = if k.filtered {
        vec![
            Check::Completed,
            Check::MinH { tol: 1e-5 },
            Check::ComparisonH {
                gamma: k.gamma,
                tol: 10.0 * k.dt,
            },
            Check::BranchConsistency,
        ]
    } else {
        vec![Check::EscapeWindow { lo: 3.0, hi: 3.2 }]
    };

    let initial = InitialHistory::constant(DVector::from_element(1, k.x0));
    let (h0, he0) = initial_values(&plant, Some(&functional), &initial, &config)?;
    Ok(Scenario {
        name: "case2".into(),
        description: "scalar plant with a delayed state constraint; the \
                      filtered loop is neutral"
            .into(),
        plant,
        functional: Some(functional),
        filter,
        initial,
        config,
        checks,
        params: echo_scalar(&k),
        demonstration: false,
        h0,
        he0,
    })
}

fn build_case3(overrides: &Overrides) -> Result<Scenario> {
    let mut map = OverrideMap::new(overrides);
    let gamma_e = map.positive("gamma_e", 1.0)?;
    let k = scalar_knobs(&mut map, 3.0, 50.0)?;
    map.finish("case3")?;

    let plant = scalar_plant(k.tau);
    let extended = Arc::new(extend(case3_spec(k.tau)?, ClassKeFn::linear(k.gamma)?)?);
    let functional = Functional::Extended(extended.clone());
    let filter = k
        .filtered
        .then(|| -> Result<FilterSpec> {
            Ok(FilterSpec::min_norm(
                FilterMode::Extended {
                    cbfal: extended.clone(),
                    alpha_e: ClassKeFn::linear(gamma_e)?,
                },
                1,
            ))
        })
        .transpose()?;

    let config = SimConfig {
        dt: k.dt,
        t_end: k.t_end,
        controller_on_at: k.controller_on_at,
        ..SimConfig::default()
    };
    let checks = if k.filtered {
        vec![
            Check::Completed,
            Check::MinH { tol: 1e-5 },
            Check::MinHe { tol: 1e-5 },
            Check::MovingAverage { tol: 1e-5 },
            Check::ComparisonHe {
                gamma_e,
                tol: 10.0 * k.dt,
            },
            Check::BranchConsistency,
        ]
    } else {
        vec![Check::EscapeWindow { lo: 3.0, hi: 3.2 }]
    };

    let mut params = echo_scalar(&k);
    params.set_number("gamma_e", gamma_e);
    let initial = InitialHistory::constant(DVector::from_element(1, k.x0));
    let (h0, he0) = initial_values(&plant, Some(&functional), &initial, &config)?;
    Ok(Scenario {
        name: "case3".into(),
        description: "scalar plant with a moving-average constraint, degree \
                      two via the extended filter"
            .into(),
        plant,
        functional: Some(functional),
        filter,
        initial,
        config,
        checks,
        params,
        demonstration: false,
        h0,
        he0,
    })
}

fn build_case4(overrides: &Overrides) -> Result<Scenario> {
    let mut map = OverrideMap::new(overrides);
    let tau = map.positive("tau", 1.0)?;
    let x0 = map.number("x0", 0.4)?;
    map.finish("case4")?;

    let plant = scalar_plant(tau);
    let spec = Arc::new(case4_spec(tau)?);
    let functional = Functional::Standard(spec);
    let config = SimConfig::default();
    let initial = InitialHistory::constant(DVector::from_element(1, x0));
    let (h0, he0) = initial_values(&plant, Some(&functional), &initial, &config)?;

    let mut params = Overrides::new();
    params.set_number("tau", tau).set_number("x0", x0);
    Ok(Scenario {
        name: "case4".into(),
        description: "structural demonstration: a lone delayed point weight \
                      admits no relative degree"
            .into(),
        plant,
        functional: Some(functional),
        filter: None,
        initial,
        config,
        checks: Vec::new(),
        params,
        demonstration: true,
        h0,
        he0,
    })
}

// ─── predator-prey ───────────────────────────────────────────────────────────

/// Parameters of the delayed predator-prey system
/// `x1' = r x1 - a x1^2 - p x1 x2`,
/// `x2' = b p x1(t - tau) x2(t - tau) - d x2 - m x2^2 + u`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PredatorPreyParams {
    /// Prey growth rate.
    pub r: f64,
    /// Prey self-limitation.
    pub a: f64,
    /// Predation rate.
    pub p: f64,
    /// Conversion efficiency of consumed prey.
    pub b: f64,
    /// Predator self-limitation.
    pub m: f64,
    /// Predator death rate.
    pub d: f64,
    /// Maturation delay of the predator response.
    pub tau: f64,
    /// Lower edge of the protected prey band.
    pub x1_min: f64,
    /// Upper edge of the protected prey band.
    pub x1_max: f64,
}

impl Default for PredatorPreyParams {
    fn default() -> Self {
        Self {
            r: 1.0,
            a: 1.0,
            p: 4.0,
            b: 1.2,
            m: 0.1,
            d: 1.0,
            tau: 5.0,
            x1_min: 0.05,
            x1_max: 0.6,
        }
    }
}

impl PredatorPreyParams {
    /// The coexistence equilibrium of the uncontrolled system; independent
    /// of the delay.
    pub fn equilibrium(&self) -> DVector<f64> {
        let den = self.a * self.m + self.b * self.p * self.p;
        DVector::from_vec(vec![
            (self.m * self.r + self.p * self.d) / den,
            (self.b * self.p * self.r - self.a * self.d) / den,
        ])
    }
}

fn predator_prey_plant(pp: PredatorPreyParams) -> ControlAffinePlant {
    ControlAffinePlant::new(
        2,
        1,
        Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            let xd = ctx.state_at(-pp.tau)?;
            Ok(DVector::from_vec(vec![
                pp.r * x[0] - pp.a * x[0] * x[0] - pp.p * x[0] * x[1],
                pp.b * pp.p * xd[0] * xd[1] - pp.d * x[1] - pp.m * x[1] * x[1],
            ]))
        }),
        Box::new(|_| Ok(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))),
    )
    .with_lags(vec![pp.tau])
}

/// `H = -(x1 - x1_min)(x1 - x1_max)` with the drift decomposition
/// `L_F H = 2 (xbar - x1) F1` attached, `xbar = (x1_min + x1_max) / 2`.
fn predator_prey_spec(pp: PredatorPreyParams) -> Result<CbfalSpec> {
    let xbar = 0.5 * (pp.x1_min + pp.x1_max);
    let f1 = move |x: &DVector<f64>| pp.r * x[0] - pp.a * x[0] * x[0] - pp.p * x[0] * x[1];
    let lf = CbfalSpec::builder("predator-prey-lf")
        .value(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(2.0 * (xbar - x[0]) * f1(&x))
        }))
        .w0(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            let df1_dx1 = pp.r - 2.0 * pp.a * x[0] - pp.p * x[1];
            Ok(RowDVector::from_vec(vec![
                -2.0 * f1(&x) + 2.0 * (xbar - x[0]) * df1_dx1,
                2.0 * (xbar - x[0]) * (-pp.p * x[0]),
            ]))
        }))
        .build()?;
    CbfalSpec::builder("predator-prey")
        .value(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(-(x[0] - pp.x1_min) * (x[0] - pp.x1_max))
        }))
        .w0(Box::new(move |ctx| {
            let x = ctx.state_at(0.0)?;
            Ok(RowDVector::from_vec(vec![2.0 * (xbar - x[0]), 0.0]))
        }))
        .lf_decomposition(lf)
        .build()
}

fn build_predator_prey(overrides: &Overrides) -> Result<Scenario> {
    let mut map = OverrideMap::new(overrides);
    let defaults = PredatorPreyParams::default();
    let pp = PredatorPreyParams {
        r: map.positive("r", defaults.r)?,
        a: map.positive("a", defaults.a)?,
        p: map.positive("p", defaults.p)?,
        b: map.positive("b", defaults.b)?,
        m: map.positive("m", defaults.m)?,
        d: map.positive("d", defaults.d)?,
        tau: map.positive("tau", defaults.tau)?,
        x1_min: map.positive("x1_min", defaults.x1_min)?,
        x1_max: map.positive("x1_max", defaults.x1_max)?,
    };
    if pp.x1_min >= pp.x1_max {
        return Err(Error::InvalidOverride {
            key: "x1_min".into(),
            reason: format!(
                "band is empty: x1_min = {} >= x1_max = {}",
                pp.x1_min, pp.x1_max
            ),
        });
    }
    let gamma = map.positive("gamma", 1.0)?;
    let gamma_e = map.positive("gamma_e", 1.0)?;
    let x0_0 = map.number("x0.0", 0.1)?;
    let x0_1 = map.number("x0.1", 0.1)?;
    let dt = map.positive("dt", 1e-3)?;
    let t_end = map.positive("t_end", 200.0)?;
    let controller_on_at = map.number("controller_on_at", 100.0)?;
    let filtered = map.bool("filter.enabled", true)?;
    let start_at_equilibrium = map.bool("init.equilibrium", false)?;
    map.finish("predator_prey")?;

    let plant = predator_prey_plant(pp);
    let extended = Arc::new(extend(predator_prey_spec(pp)?, ClassKeFn::linear(gamma)?)?);
    let functional = Functional::Extended(extended.clone());
    let filter = filtered
        .then(|| -> Result<FilterSpec> {
            Ok(FilterSpec::min_norm(
                FilterMode::Extended {
                    cbfal: extended.clone(),
                    alpha_e: ClassKeFn::linear(gamma_e)?,
                },
                1,
            ))
        })
        .transpose()?;

    let config = SimConfig {
        dt,
        t_end,
        record_stride: 10,
        controller_on_at,
        ..SimConfig::default()
    };
    let eq = pp.equilibrium();
    let checks = if start_at_equilibrium {
        vec![
            Check::Completed,
            Check::EquilibriumResidual {
                eq: eq.clone(),
                tol: 1e-12,
            },
            Check::StaysNearStart { tol: 1e-6 },
            Check::BranchConsistency,
        ]
    } else if filtered {
        vec![
            Check::Completed,
            Check::EquilibriumResidual {
                eq: eq.clone(),
                tol: 1e-12,
            },
            Check::UnsafeWitness {
                before: controller_on_at,
            },
            Check::InvarianceAfterEntry {
                entry_after: controller_on_at,
                tol: 1e-4,
            },
            Check::RangeAfterEntry {
                entry_after: controller_on_at,
                component: 0,
                lo: pp.x1_min,
                hi: pp.x1_max,
                tol: 1e-4,
            },
            Check::MinimalIntervention {
                after: controller_on_at,
                fraction: 1e-3,
            },
            Check::BranchConsistency,
        ]
    } else {
        vec![Check::UnsafeWitness {
            before: controller_on_at,
        }]
    };

    let initial = if start_at_equilibrium {
        InitialHistory::constant(eq)
    } else {
        InitialHistory::constant(DVector::from_vec(vec![x0_0, x0_1]))
    };
    let (h0, he0) = initial_values(&plant, Some(&functional), &initial, &config)?;

    let mut params = Overrides::new();
    params
        .set_number("r", pp.r)
        .set_number("a", pp.a)
        .set_number("p", pp.p)
        .set_number("b", pp.b)
        .set_number("m", pp.m)
        .set_number("d", pp.d)
        .set_number("tau", pp.tau)
        .set_number("x1_min", pp.x1_min)
        .set_number("x1_max", pp.x1_max)
        .set_number("gamma", gamma)
        .set_number("gamma_e", gamma_e)
        .set_number("x0.0", x0_0)
        .set_number("x0.1", x0_1)
        .set_number("dt", dt)
        .set_number("t_end", t_end)
        .set_number("controller_on_at", controller_on_at)
        .set_bool("filter.enabled", filtered)
        .set_bool("init.equilibrium", start_at_equilibrium);
    Ok(Scenario {
        name: "predator_prey".into(),
        description: "delayed predator-prey system keeping the prey \
                      population inside a band, extended filter engaged \
                      mid-run"
            .into(),
        plant,
        functional: Some(functional),
        filter,
        initial,
        config,
        checks,
        params,
        demonstration: false,
        h0,
        he0,
    })
}

// ─── registry ────────────────────────────────────────────────────────────────

/// Builds a named scenario with overrides applied. Unknown names list the
/// available scenarios; unknown or ill-typed keys are rejected.
pub fn build(name: &str, overrides: &Overrides) -> Result<Scenario> {
    match name {
        "case1" => build_case1(overrides),
        "case2" => build_case2(overrides),
        "case3" => build_case3(overrides),
        "case4" => build_case4(overrides),
        "predator_prey" => build_predator_prey(overrides),
        other => Err(Error::UnknownScenario {
            name: other.into(),
            known: SCENARIOS.join(", "),
        }),
    }
}

/// `H` and `He` on the initial history at `t = 0`, before any step.
fn initial_values(
    plant: &ControlAffinePlant,
    functional: Option<&Functional>,
    initial: &InitialHistory,
    cfg: &SimConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let Some(f) = functional else {
        return Ok((None, None));
    };
    let mut lag = plant.max_internal_lag().max(f.spec().delays().max_lag);
    if let Some(lf) = f.spec().lf_decomposition() {
        lag = lag.max(lf.delays().max_lag);
    }
    let lag = lag.max(cfg.dt);
    let mut window =
        crate::history::HistoryWindow::with_initial_history(initial.clone(), 0.0, lag, cfg.interp)?;
    window.set_grid_hint(cfg.dt);
    let ctx = EvalCtx::at(&window, 0.0).with_quadrature(cfg.quadrature);
    let h0 = f.h(&ctx)?;
    let he0 = f.he(plant, &ctx)?;
    Ok((Some(h0), he0))
}

// ─── convergence ─────────────────────────────────────────────────────────────

/// One step-size row of a convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    /// Terminal state `x(t_end)`.
    pub terminal: Vec<f64>,
}

/// Self-convergence of the terminal state across a ladder of step sizes.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub scenario: String,
    pub t_end: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Max-norm differences of consecutive terminal states (coarse first).
    pub errors: Vec<f64>,
    /// Observed orders `log(e_i / e_{i+1}) / log(dt_i / dt_{i+1})`.
    pub orders: Vec<f64>,
}

impl ConvergenceStudy {
    /// Smallest observed order, when any pair of errors is available.
    pub fn min_order(&self) -> Option<f64> {
        self.orders
            .iter()
            .copied()
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "convergence: {} to t_end = {}\n  dt           |x(t_end) - x_next|\n",
            self.scenario, self.t_end
        );
        for (i, row) in self.rows.iter().enumerate() {
            let err = self
                .errors
                .get(i)
                .map(|e| format!("{e:.6e}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!("  {:<12.6e} {err}\n", row.dt));
        }
        for (i, o) in self.orders.iter().enumerate() {
            out.push_str(&format!(
                "  order {} -> {}: {o:.3}\n",
                self.rows[i].dt,
                self.rows[i + 1].dt
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }
}

/// Runs a scenario over a descending ladder of step sizes and measures
/// self-convergence of the terminal state.
///
/// Unless the overrides pin `t_end`, the study runs to `t_end = 10` so the
/// terminal state is still dt-sensitive (long runs saturate onto the
/// constraint boundary and the differences degenerate to rounding noise).
pub fn convergence_study(
    name: &str,
    overrides: &Overrides,
    dts: &[f64],
) -> Result<ConvergenceStudy> {
    let mut ladder: Vec<f64> = dts.to_vec();
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ladder.dedup();
    if ladder.len() < 2 {
        return Err(Error::InvalidConfig {
            reason: "a convergence study needs at least two distinct step sizes".into(),
        });
    }

    let mut rows = Vec::new();
    let mut t_end = 0.0;
    for &dt in &ladder {
        let mut ov = overrides.clone();
        ov.set_number("dt", dt);
        if overrides.get("t_end").is_none() {
            ov.set_number("t_end", 10.0);
        }
        let scenario = build(name, &ov)?;
        t_end = scenario.config().t_end;
        let outcome = scenario.run()?;
        if !outcome.termination.is_completed() {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "convergence run at dt = {dt} did not complete: {}",
                    termination_text(&outcome.termination)
                ),
            });
        }
        let terminal = outcome
            .records
            .last()
            .map(|r| r.x.iter().copied().collect())
            .unwrap_or_default();
        rows.push(ConvergenceRow { dt, terminal });
    }

    let errors: Vec<f64> = rows
        .windows(2)
        .map(|pair| {
            pair[0]
                .terminal
                .iter()
                .zip(&pair[1].terminal)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let orders: Vec<f64> = errors
        .windows(2)
        .enumerate()
        .map(|(i, e)| (e[0] / e[1]).ln() / (ladder[i] / ladder[i + 1]).ln())
        .collect();
    Ok(ConvergenceStudy {
        scenario: name.into(),
        t_end,
        rows,
        errors,
        orders,
    })
}

// ─── tests ───────────────────────────────────────────────────────────────────
