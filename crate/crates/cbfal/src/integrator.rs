//! Fixed-step method-of-steps integration of the closed loop.
//!
//! The plant is control-affine in the input: `xdot(t) = F(x_t, xdot_t) +
//! G(x_t, xdot_t) u(t)`, where `F` and `G` read the history through an
//! [`EvalCtx`] and, for neutral plants, the derivative history at strictly
//! positive lags only. Each committed step evaluates the filter (when one is
//! engaged), forms the closed-loop right-hand side, commits `(t, x, xdot)` to
//! the history window, and advances with classical RK4 whose stages
//! re-evaluate the filter at the stage head. The committed derivative at a
//! controller switch is the post-switch vector field, which fixes the
//! right-hand derivative convention for every later delayed read.
//!
//! Terminations that leave a usable partial trajectory (finite-time escape,
//! degenerate filter constraint) are reported in [`SimOutcome::termination`]
//! rather than as errors, so diagnostics over the recorded prefix remain
//! possible.

use nalgebra::{DMatrix, DVector};
use std::io::Write;

use crate::functionals::{EvalCtx, Functional, QuadratureRule};
use crate::history::{HistoryWindow, InitialHistory, InterpMode, SNAP_REL};
use crate::safety_filter::{self, FilterSpec};
use crate::{Error, Result};

/// Drift closure of a plant.
pub type PlantFn = Box<dyn Fn(&EvalCtx<'_>) -> Result<DVector<f64>> + Send + Sync>;
/// Input-matrix closure of a plant.
pub type PlantMatFn = Box<dyn Fn(&EvalCtx<'_>) -> Result<DMatrix<f64>> + Send + Sync>;

fn snap_eps(q: f64) -> f64 {
    SNAP_REL * (1.0 + q.abs())
}

/// Control-affine time-delay plant `xdot = F + G u`.
pub struct ControlAffinePlant {
    n: usize,
    m: usize,
    f: PlantFn,
    g: PlantMatFn,
    neutral: bool,
    lags: Vec<f64>,
}

impl ControlAffinePlant {
    pub fn new(n: usize, m: usize, f: PlantFn, g: PlantMatFn) -> Self {
        Self {
            n,
            m,
            f,
            g,
            neutral: false,
            lags: Vec::new(),
        }
    }

    /// Declares the point lags `F` and `G` read, for grid alignment checks
    /// and window sizing.
    pub fn with_lags(mut self, lags: Vec<f64>) -> Self {
        self.lags = lags;
        self
    }

    /// Marks the plant as neutral: `F` or `G` read the derivative history.
    /// Neutral closures must never query the lag-zero derivative; the
    /// context enforces that dynamically.
    pub fn neutral(mut self, yes: bool) -> Self {
        self.neutral = yes;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn is_neutral(&self) -> bool {
        self.neutral
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    /// Largest declared point lag, zero when undelayed.
    pub fn max_internal_lag(&self) -> f64 {
        self.lags.iter().copied().fold(0.0, f64::max)
    }

    /// Drift term at the context; checked to have the state dimension.
    pub fn eval_f(&self, ctx: &EvalCtx<'_>) -> Result<DVector<f64>> {
        let v = (self.f)(ctx)?;
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        Ok(v)
    }

    /// Input matrix at the context; checked to be `n x m`.
    pub fn eval_g(&self, ctx: &EvalCtx<'_>) -> Result<DMatrix<f64>> {
        let g = (self.g)(ctx)?;
        if g.nrows() != self.n || g.ncols() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.m,
                got: g.nrows() * g.ncols(),
            });
        }
        Ok(g)
    }
}

/// Fixed-step simulation configuration.
#[derive(Clone, Debug)]
pub struct SimConfig {
    /// Step size; every declared lag must be an integer multiple of it.
    pub dt: f64,
    /// Final time; must be an integer multiple of `dt`.
    pub t_end: f64,
    /// Every `record_stride`-th committed step lands in the record list.
    pub record_stride: usize,
    /// The filter engages once `t >= controller_on_at`; before that the loop
    /// runs open with `u = 0`.
    pub controller_on_at: f64,
    /// Keep every committed sample (required for post-hoc switch
    /// localization); otherwise the window prunes behind the largest lag.
    pub retain_history: bool,
    /// State interpolation mode of the history window.
    pub interp: InterpMode,
    /// Quadrature rule for distributed terms.
    pub quadrature: QuadratureRule,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 50.0,
            record_stride: 1,
            controller_on_at: 0.0,
            retain_history: false,
            interp: InterpMode::CubicHermite,
            quadrature: QuadratureRule::Trapezoid,
        }
    }
}

/// One recorded step of the closed loop. Diagnostics that do not apply to
/// the run mode are `None` and export as empty CSV fields: `he`, `phi`, and
/// `active` are populated only while the filter is engaged, `h` whenever a
/// functional is attached.
#[derive(Clone, Debug)]
pub struct SimRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub h: Option<f64>,
    pub he: Option<f64>,
    pub phi: Option<f64>,
    pub active: Option<bool>,
}

/// Why a simulation stopped.
#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    /// Reached `t_end`.
    Completed,
    /// A state component or the vector field left the range of `f64` at `t`;
    /// records up to the last finite step are kept.
    NonFiniteState { t: f64 },
    /// The filter constraint was violated while its input direction was
    /// numerically zero at `t`; no finite control exists.
    DegenerateConstraint { t: f64, phi: f64, phi0_norm: f64 },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

/// Result of a simulation: the records, the final history window, and how
/// the run ended.
pub struct SimOutcome {
    pub records: Vec<SimRecord>,
    pub window: HistoryWindow,
    pub termination: Termination,
    pub config: SimConfig,
}

/// How the loop is closed.
pub enum ControlMode<'a> {
    /// `u = 0` throughout; an optional functional is evaluated for the `H`
    /// record column.
    Uncontrolled { monitor: Option<&'a Functional> },
    /// The filter output drives the plant from `controller_on_at` onwards.
    Filtered { filter: &'a FilterSpec },
}

/// Checks that `value` is an integer multiple of `dt` within 1e-12 relative.
fn check_aligned(what: &str, value: f64, dt: f64) -> Result<()> {
    if value == 0.0 {
        return Ok(());
    }
    let ratio = value / dt;
    if (ratio - ratio.round()).abs() > 1e-12 * (1.0 + ratio.abs()) {
        return Err(Error::InvalidConfig {
            reason: format!("{what} = {value} is not an integer multiple of dt = {dt}"),
        });
    }
    Ok(())
}

fn validate(
    plant: &ControlAffinePlant,
    mode: &ControlMode<'_>,
    initial: &InitialHistory,
    cfg: &SimConfig,
) -> Result<(usize, f64)> {
    if initial.dim() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.state_dim(),
            got: initial.dim(),
        });
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("dt must be positive and finite, got {}", cfg.dt),
        });
    }
    if !(cfg.t_end.is_finite() && cfg.t_end > 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("t_end must be positive and finite, got {}", cfg.t_end),
        });
    }
    if cfg.record_stride == 0 {
        return Err(Error::InvalidConfig {
            reason: "record_stride must be at least 1".into(),
        });
    }
    let steps_f = cfg.t_end / cfg.dt;
    if (steps_f - steps_f.round()).abs() > 1e-6 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "t_end = {} is not an integer multiple of dt = {}",
                cfg.t_end, cfg.dt
            ),
        });
    }
    let steps = steps_f.round() as usize;
    if steps == 0 {
        return Err(Error::InvalidConfig {
            reason: "simulation needs at least one step".into(),
        });
    }
    for &lag in plant.lags() {
        if !(lag.is_finite() && lag > 0.0) {
            return Err(Error::InvalidConfig {
                reason: format!("plant lag must be positive and finite, got {lag}"),
            });
        }
        check_aligned("plant lag", lag, cfg.dt)?;
    }
    let mut max_lag = plant.max_internal_lag();
    if let Some(func) = mode_functional_ref(mode) {
        let delays = func.spec().delays();
        for &lag in &delays.point_lags {
            check_aligned("functional point lag", lag, cfg.dt)?;
        }
        for d in func.spec().dist_weights() {
            check_aligned("distributed interval endpoint", d.sigma1(), cfg.dt)?;
            check_aligned("distributed interval endpoint", d.sigma2(), cfg.dt)?;
        }
        if let Some(lf) = func.spec().lf_decomposition() {
            for &lag in &lf.delays().point_lags {
                check_aligned("drift-decomposition point lag", lag, cfg.dt)?;
            }
        }
        max_lag = max_lag.max(delays.max_lag).max(
            func.spec()
                .lf_decomposition()
                .map_or(0.0, |s| s.delays().max_lag),
        );
    }
    Ok((steps, max_lag))
}

fn mode_functional_ref(mode: &ControlMode<'_>) -> Option<Functional> {
    match mode {
        ControlMode::Uncontrolled { monitor } => monitor.cloned(),
        ControlMode::Filtered { filter } => Some(filter.functional()),
    }
}

/// Closed-loop right-hand side at a (possibly provisional) head state, plus
/// the filter evaluation when engaged.
struct HeadEval {
    rhs: DVector<f64>,
    u: DVector<f64>,
    h: Option<f64>,
    he: Option<f64>,
    phi: Option<f64>,
    active: Option<bool>,
}

// The argument list mirrors the physical inputs of one closed-loop
// evaluation; bundling them would only move the names one hop away.
#[allow(clippy::too_many_arguments)]
fn eval_head(
    plant: &ControlAffinePlant,
    mode: &ControlMode<'_>,
    functional: &Option<Functional>,
    window: &HistoryWindow,
    t: f64,
    x: &DVector<f64>,
    cfg: &SimConfig,
    with_diagnostics: bool,
) -> Result<HeadEval> {
    let ctx = EvalCtx::with_head(window, t, x).with_quadrature(cfg.quadrature);
    let engaged = match mode {
        ControlMode::Filtered { .. } => t >= cfg.controller_on_at - snap_eps(t),
        ControlMode::Uncontrolled { .. } => false,
    };
    let (u, he, phi, active) = if engaged {
        let ControlMode::Filtered { filter } = mode else {
            unreachable!("engaged implies filtered mode")
        };
        let constraint = safety_filter::constraint(filter, plant, &ctx)?;
        let result = safety_filter::apply(&constraint, filter.epsilon_guard)?;
        (
            result.u,
            constraint.he,
            Some(constraint.phi),
            Some(result.active),
        )
    } else {
        (DVector::zeros(plant.input_dim()), None, None, None)
    };
    let mut rhs = plant.eval_f(&ctx)?;
    if engaged {
        rhs += plant.eval_g(&ctx)? * &u;
    }
    let h = if with_diagnostics {
        match functional {
            Some(f) => Some(f.h(&ctx)?),
            None => None,
        }
    } else {
        None
    };
    Ok(HeadEval {
        rhs,
        u,
        h,
        he,
        phi,
        active,
    })
}

/// Runs the closed loop from the initial history to `t_end` (or an earlier
/// termination).
///
/// Errors signal configuration or closure contract violations. Finite-time
/// escape and degenerate constraints are terminations, not errors.
pub fn simulate(
    plant: &ControlAffinePlant,
    mode: ControlMode<'_>,
    initial: &InitialHistory,
    cfg: &SimConfig,
) -> Result<SimOutcome> {
    let (steps, max_lag) = validate(plant, &mode, initial, cfg)?;
    let functional = mode_functional_ref(&mode);
    let mut window =
        HistoryWindow::with_initial_history(initial.clone(), 0.0, max_lag, cfg.interp)?;
    window.set_grid_hint(cfg.dt);
    window.set_retain_all(cfg.retain_history);

    let mut records = Vec::with_capacity(steps / cfg.record_stride + 2);
    let mut x = initial.state(0.0);
    if x.len() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.state_dim(),
            got: x.len(),
        });
    }
    let mut termination = Termination::Completed;

    'outer: for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if !x.iter().all(|v| v.is_finite()) {
            termination = Termination::NonFiniteState { t };
            break;
        }
        let head = match eval_head(
            plant,
            &mode,
            &functional,
            &window,
            t,
            &x,
            cfg,
            k % cfg.record_stride == 0,
        ) {
            Ok(h) => h,
            Err(Error::DegenerateConstraint { phi, phi0_norm, .. }) => {
                termination = Termination::DegenerateConstraint { t, phi, phi0_norm };
                break;
            }
            Err(e) => return Err(e),
        };
        if !head.rhs.iter().all(|v| v.is_finite()) {
            // The state is finite but the vector field overflowed; the
            // trajectory leaves representable range within this step.
            termination = Termination::NonFiniteState { t };
            break;
        }
        window.append(t, x.clone(), head.rhs.clone())?;
        if k % cfg.record_stride == 0 {
            records.push(SimRecord {
                t,
                x: x.clone(),
                u: head.u.clone(),
                h: head.h,
                he: head.he,
                phi: head.phi,
                active: head.active,
            });
        }
        if k == steps {
            break;
        }

        // RK4 with filter re-evaluation at each stage head. Delayed reads at
        // stage times stay on committed data because every lag is at least
        // one full step.
        let k1 = head.rhs;
        let half = 0.5 * cfg.dt;
        let stage_rhs =
            |ts: f64, xs: &DVector<f64>| -> std::result::Result<DVector<f64>, StageStop> {
                match eval_head(plant, &mode, &functional, &window, ts, xs, cfg, false) {
                    Ok(h) => Ok(h.rhs),
                    Err(Error::DegenerateConstraint { phi, phi0_norm, .. }) => {
                        Err(StageStop::Degenerate {
                            t: ts,
                            phi,
                            phi0_norm,
                        })
                    }
                    Err(e) => Err(StageStop::Fatal(e)),
                }
            };
        let advance = (|| -> std::result::Result<DVector<f64>, StageStop> {
            let k2 = stage_rhs(t + half, &(&x + half * &k1))?;
            let k3 = stage_rhs(t + half, &(&x + half * &k2))?;
            let k4 = stage_rhs(t + cfg.dt, &(&x + cfg.dt * &k3))?;
            Ok((cfg.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        })();
        match advance {
            Ok(dx) => x += dx,
            Err(StageStop::Degenerate { t, phi, phi0_norm }) => {
                termination = Termination::DegenerateConstraint { t, phi, phi0_norm };
                break 'outer;
            }
            Err(StageStop::Fatal(e)) => return Err(e),
        }
    }

    Ok(SimOutcome {
        records,
        window,
        termination,
        config: cfg.clone(),
    })
}

enum StageStop {
    Degenerate { t: f64, phi: f64, phi0_norm: f64 },
    Fatal(Error),
}

/// A localized zero crossing of the switching surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchEvent {
    /// Crossing time, refined to `|phi| <= 1e-9`.
    pub t: f64,
    /// `true` when `phi` crossed into the negative (filter engages), `false`
    /// when it released.
    pub engaged: bool,
}

/// Localizes every sign change of the recorded constraint `phi` by bisection
/// on the switching surface over the retained trajectory.
///
/// Needs a run with `retain_history` (the whole committed window) and a
/// filter; consecutive records with recorded `phi` of opposite sign bracket
/// each crossing.
pub fn locate_switch(
    plant: &ControlAffinePlant,
    filter: &FilterSpec,
    outcome: &SimOutcome,
) -> Result<Vec<SwitchEvent>> {
    if !outcome.config.retain_history {
        return Err(Error::InvalidConfig {
            reason: "switch localization needs a run with retain_history".into(),
        });
    }
    let mut events = Vec::new();
    let quad = outcome.config.quadrature;
    let surface = |t: f64| -> Result<f64> {
        let ctx = EvalCtx::at(&outcome.window, t).with_quadrature(quad);
        safety_filter::switching_surface(filter, plant, &ctx)
    };
    for pair in outcome.records.windows(2) {
        let (Some(p0), Some(p1)) = (pair[0].phi, pair[1].phi) else {
            continue;
        };
        if p0 == 0.0 || p0.signum() == p1.signum() {
            continue;
        }
        let (mut lo, mut hi) = (pair[0].t, pair[1].t);
        let (mut flo, mut fhi) = (p0, p1);
        let mut t_mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            t_mid = 0.5 * (lo + hi);
            let fm = surface(t_mid)?;
            if fm.abs() <= 1e-9 {
                break;
            }
            if fm.signum() == flo.signum() {
                lo = t_mid;
                flo = fm;
            } else {
                hi = t_mid;
                fhi = fm;
            }
        }
        let _ = fhi;
        events.push(SwitchEvent {
            t: t_mid,
            engaged: p1 < 0.0,
        });
    }
    Ok(events)
}

/// Writes records as CSV with header
/// `t,x_0..x_{n-1},u_0..u_{m-1},H,He,phi,active`, floats at 17 significant
/// digits, inapplicable diagnostics as empty fields, and `active` as 0/1.
pub fn write_records_csv<W: Write>(
    records: &[SimRecord],
    n: usize,
    m: usize,
    w: &mut W,
) -> Result<()> {
    write!(w, "t")?;
    for j in 0..n {
        write!(w, ",x_{j}")?;
    }
    for j in 0..m {
        write!(w, ",u_{j}")?;
    }
    writeln!(w, ",H,He,phi,active")?;
    for r in records {
        write!(w, "{:.16e}", r.t)?;
        for j in 0..n {
            write!(w, ",{:.16e}", r.x[j])?;
        }
        for j in 0..m {
            write!(w, ",{:.16e}", r.u[j])?;
        }
        match r.h {
            Some(v) => write!(w, ",{v:.16e}")?,
            None => write!(w, ",")?,
        }
        match r.he {
            Some(v) => write!(w, ",{v:.16e}")?,
            None => write!(w, ",")?,
        }
        match r.phi {
            Some(v) => write!(w, ",{v:.16e}")?,
            None => write!(w, ",")?,
        }
        match r.active {
            Some(a) => writeln!(w, ",{}", u8::from(a))?,
            None => writeln!(w, ",")?,
        }
    }
    Ok(())
}

// ─── tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn undelayed_decay_plant() -> ControlAffinePlant {
        // xdot = -x, analytic solution exp(-t).
        ControlAffinePlant::new(
            1,
            1,
            Box::new(|ctx| Ok(-ctx.state_at(0.0)?)),
            Box::new(|_| Ok(DMatrix::zeros(1, 1))),
        )
    }

    #[test]
    fn rk4_matches_the_exponential_to_classical_order() {
        let plant = undelayed_decay_plant();
        let initial = InitialHistory::constant(DVector::from_element(1, 1.0));
        let cfg = SimConfig {
            dt: 1e-2,
            t_end: 1.0,
            ..SimConfig::default()
        };
        let out = simulate(
            &plant,
            ControlMode::Uncontrolled { monitor: None },
            &initial,
            &cfg,
        )
        .unwrap();
        assert!(out.termination.is_completed());
        let last = out.records.last().unwrap();
        // RK4 local error ~ dt^5; global ~ dt^4 = 1e-8 scale.
        assert!((last.x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn config_validation_rejects_misaligned_lags() {
        let plant = undelayed_decay_plant().with_lags(vec![0.35]);
        let initial = InitialHistory::constant(DVector::from_element(1, 1.0));
        let cfg = SimConfig {
            dt: 0.1,
            t_end: 1.0,
            ..SimConfig::default()
        };
        let err = simulate(
            &plant,
            ControlMode::Uncontrolled { monitor: None },
            &initial,
            &cfg,
        );
        assert!(matches!(err, Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn non_finite_escape_terminates_with_partial_records() {
        // xdot = x^2 from x(0) = 1 escapes at t = 1.
        let plant = ControlAffinePlant::new(
            1,
            1,
            Box::new(|ctx| {
                let x = ctx.state_at(0.0)?;
                Ok(DVector::from_element(1, x[0] * x[0]))
            }),
            Box::new(|_| Ok(DMatrix::zeros(1, 1))),
        );
        let initial = InitialHistory::constant(DVector::from_element(1, 1.0));
        let cfg = SimConfig {
            dt: 1e-3,
            t_end: 2.0,
            ..SimConfig::default()
        };
        let out = simulate(
            &plant,
            ControlMode::Uncontrolled { monitor: None },
            &initial,
            &cfg,
        )
        .unwrap();
        match out.termination {
            Termination::NonFiniteState { t } => assert!(t > 0.99 && t < 1.1, "escape at {t}"),
            other => panic!("expected escape, got {other:?}"),
        }
        assert!(!out.records.is_empty());
        assert!(out.records.iter().all(|r| r.x[0].is_finite()));
    }

    #[test]
    fn delayed_plant_reads_the_initial_history() {
        // xdot(t) = x(t - 1) with x(theta) = 1 on [-1, 0]: x(t) = 1 + t on
        // [0, 1].
        let plant = ControlAffinePlant::new(
            1,
            1,
            Box::new(|ctx| ctx.state_at(-1.0)),
            Box::new(|_| Ok(DMatrix::zeros(1, 1))),
        )
        .with_lags(vec![1.0]);
        let initial = InitialHistory::constant(DVector::from_element(1, 1.0));
        let cfg = SimConfig {
            dt: 1e-2,
            t_end: 1.0,
            ..SimConfig::default()
        };
        let out = simulate(
            &plant,
            ControlMode::Uncontrolled { monitor: None },
            &initial,
            &cfg,
        )
        .unwrap();
        let last = out.records.last().unwrap();
        assert!((last.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_emits_empty_fields_for_missing_diagnostics() {
        let rec = SimRecord {
            t: 0.5,
            x: DVector::from_element(1, 2.0),
            u: DVector::from_element(1, 0.0),
            h: Some(0.25),
            he: None,
            phi: None,
            active: None,
        };
        let mut buf = Vec::new();
        write_records_csv(&[rec], 1, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_0,u_0,H,He,phi,active");
        let row = lines.next().unwrap();
        assert!(row.ends_with(",,,"), "row was {row:?}");
    }
}
