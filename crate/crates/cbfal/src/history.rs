//! Committed trajectory storage with dense interpolation of state and
//! derivative channels.
//!
//! A [`HistoryWindow`] holds samples `(t_k, x(t_k), xdot(t_k))` committed by
//! the integrator, plus an optional [`InitialHistory`] that answers queries
//! before the start of integration directly from user-supplied callables (the
//! pre-horizon segment is never resampled). Delayed terms of the dynamics and
//! of barrier functionals read through [`HistoryWindow::eval_state`] and
//! [`HistoryWindow::eval_derivative`].
//!
//! Conventions that the rest of the crate relies on:
//!
//! * The state channel interpolates with cubic Hermite polynomials built from
//!   the stored derivative samples (or piecewise-linearly in
//!   [`InterpMode::Linear`]).
//! * The derivative channel is always interpolated piecewise-linearly over
//!   the stored derivative samples, never by differencing the state
//!   interpolant. A query landing exactly on a stored sample returns the
//!   stored value, which at a controller switch is the right-hand derivative
//!   because the integrator commits the post-switch vector field.
//! * Queries within [`SNAP_REL`] (relative) of a stored sample time snap to
//!   that sample, so grid-aligned delayed lookups are exact rather than
//!   round-trip victims of `t - k*dt` rounding.

use nalgebra::DVector;
use std::io::Write;
use std::sync::Arc;

use crate::{Error, Result};

/// Relative half-width of the snap interval around each stored sample time.
///
/// Chosen far above the `f64` rounding error of grid arithmetic (about 1e-13
/// for times up to a few hundred) and far below every step size in use (1e-5
/// and larger), so snapping can neither miss a grid-aligned query nor capture
/// a genuinely off-grid one.
pub const SNAP_REL: f64 = 1e-9;

/// Extra samples retained behind the oldest needed interpolation cell, so a
/// query exactly at the trailing edge of the window keeps a full stencil.
const STENCIL_MARGIN: usize = 2;

/// Dead samples accumulate at the front until this many are dropped in one
/// batch; draining one sample per append would shift the whole buffer each
/// step.
const PRUNE_BATCH: usize = 1024;

fn snap_eps(q: f64) -> f64 {
    SNAP_REL * (1.0 + q.abs())
}

/// Interpolation scheme for the state channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    /// Piecewise-linear in the stored states; reproduces polynomials of
    /// degree one exactly.
    Linear,
    /// Cubic Hermite in each cell using the stored derivatives as slopes;
    /// reproduces polynomials of degree three exactly. The default.
    CubicHermite,
}

/// User-supplied pre-horizon segment: state and derivative as dense callables
/// of the shifted time `theta <= 0` relative to the start of integration.
///
/// The two callables must be consistent (`derivative` is the theta-derivative
/// of `state`); [`InitialHistory::check_consistency`] spot-checks this with
/// finite differences. Cloning is cheap, the callables are shared.
#[derive(Clone)]
pub struct InitialHistory {
    state_fn: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    derivative_fn: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    dim: usize,
}

impl InitialHistory {
    /// Wraps dense state and derivative callables of `theta <= 0`.
    pub fn new(
        dim: usize,
        state_fn: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        derivative_fn: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_fn: Arc::new(state_fn),
            derivative_fn: Arc::new(derivative_fn),
            dim,
        }
    }

    /// Constant pre-horizon segment `x(theta) = x0`, `xdot(theta) = 0`.
    pub fn constant(x0: DVector<f64>) -> Self {
        let dim = x0.len();
        let zero = DVector::zeros(dim);
        Self::new(dim, move |_| x0.clone(), move |_| zero.clone())
    }

    /// State at shifted time `theta <= 0`.
    pub fn state(&self, theta: f64) -> DVector<f64> {
        (self.state_fn)(theta)
    }

    /// Derivative at shifted time `theta <= 0`.
    pub fn derivative(&self, theta: f64) -> DVector<f64> {
        (self.derivative_fn)(theta)
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Checks that `derivative` matches a central difference of `state` at
    /// `probes` interior points of `[-span, 0]`, within `tol` absolute plus
    /// relative error.
    pub fn check_consistency(&self, span: f64, probes: usize, tol: f64) -> Result<()> {
        let h = 1e-6 * (1.0 + span);
        for i in 0..probes {
            let theta = -span + (i as f64 + 0.5) / probes as f64 * (span - 2.0 * h);
            let fd = (self.state(theta + h) - self.state(theta - h)) / (2.0 * h);
            let an = self.derivative(theta);
            let err = (&fd - &an).amax();
            if err > tol * (1.0 + an.amax()) {
                return Err(Error::InvalidConfig {
                    reason: format!(
                        "initial history derivative disagrees with state slope at theta = {theta}: \
                         difference {err:.3e}"
                    ),
                });
            }
        }
        Ok(())
    }
}

struct Sample {
    t: f64,
    x: DVector<f64>,
    xd: DVector<f64>,
}

struct Anchor {
    t0: f64,
    init: InitialHistory,
}

/// Where an absolute-time query lands relative to the stored samples.
pub(crate) enum Lookup {
    /// Before the first sample (and not served by an initial history).
    Before,
    /// Within snap distance of sample `i`.
    At(usize),
    /// Strictly inside cell `[i, i + 1]` with local coordinate `s` in (0, 1).
    Cell(usize, f64),
    /// After the last sample.
    After,
}

/// Committed trajectory with dense state and derivative interpolation.
pub struct HistoryWindow {
    samples: Vec<Sample>,
    dim: usize,
    max_lag: f64,
    interp: InterpMode,
    retain_all: bool,
    grid_hint: Option<f64>,
    anchor: Option<Anchor>,
}

impl HistoryWindow {
    /// Empty window over states of dimension `dim` that must answer delayed
    /// queries up to `max_lag` behind the newest sample.
    pub fn new(dim: usize, max_lag: f64, interp: InterpMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig {
                reason: "state dimension must be positive".into(),
            });
        }
        if !max_lag.is_finite() || max_lag < 0.0 {
            return Err(Error::InvalidConfig {
                reason: format!("max_lag must be finite and nonnegative, got {max_lag}"),
            });
        }
        Ok(Self {
            samples: Vec::new(),
            dim,
            max_lag,
            interp,
            retain_all: false,
            grid_hint: None,
            anchor: None,
        })
    }

    /// Window anchored to an initial history: queries before `t0` route to
    /// the user callables (shifted by `t0`), queries from `t0` on are served
    /// by committed samples. The first appended sample must lie at or after
    /// `t0`.
    pub fn with_initial_history(
        init: InitialHistory,
        t0: f64,
        max_lag: f64,
        interp: InterpMode,
    ) -> Result<Self> {
        let mut w = Self::new(init.dim(), max_lag, interp)?;
        if !t0.is_finite() {
            return Err(Error::InvalidConfig {
                reason: format!("anchor time must be finite, got {t0}"),
            });
        }
        w.anchor = Some(Anchor { t0, init });
        Ok(w)
    }

    /// Keeps every committed sample instead of pruning behind the window.
    /// Required for post-hoc analysis such as switch localization.
    pub fn set_retain_all(&mut self, retain: bool) {
        self.retain_all = retain;
    }

    /// Declares the nominal grid spacing; quadrature over the window uses it
    /// to place nodes on cell boundaries. Inferred from committed samples
    /// when unset.
    pub fn set_grid_hint(&mut self, dt: f64) {
        if dt.is_finite() && dt > 0.0 {
            self.grid_hint = Some(dt);
        }
    }

    /// Nominal grid spacing: the declared hint, else the width of the newest
    /// cell.
    pub fn grid_step(&self) -> Option<f64> {
        self.grid_hint.or_else(|| {
            let n = self.samples.len();
            (n >= 2).then(|| self.samples[n - 1].t - self.samples[n - 2].t)
        })
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Maximum lag the window answers behind its newest sample.
    pub fn max_lag(&self) -> f64 {
        self.max_lag
    }

    /// State interpolation mode.
    pub fn interp(&self) -> InterpMode {
        self.interp
    }

    /// Number of retained samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when no sample has been committed.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of the newest committed sample.
    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Newest committed sample as `(t, x, xdot)`.
    pub fn last_sample(&self) -> Option<(f64, &DVector<f64>, &DVector<f64>)> {
        self.samples.last().map(|s| (s.t, &s.x, &s.xd))
    }

    /// Covered absolute-time span `[lo, hi]`, including the initial-history
    /// segment when present. `None` for an empty unanchored window.
    pub fn span(&self) -> Option<(f64, f64)> {
        match (&self.anchor, self.samples.first(), self.samples.last()) {
            (Some(a), _, Some(last)) => Some((a.t0 - self.max_lag, last.t)),
            (Some(a), _, None) => Some((a.t0 - self.max_lag, a.t0)),
            (None, Some(first), Some(last)) => Some((first.t, last.t)),
            (None, _, _) => None,
        }
    }

    /// Times of the retained samples, oldest first.
    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    /// Appends a committed sample.
    ///
    /// `t` must strictly advance past the previous sample (and not precede
    /// the initial-history anchor); `x` and `xdot` must match the window
    /// dimension. Unless [`set_retain_all`](Self::set_retain_all) was
    /// enabled, samples older than `t - max_lag` minus an interpolation
    /// stencil are discarded in batches.
    pub fn append(&mut self, t: f64, x: DVector<f64>, xdot: DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if xdot.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: xdot.len(),
            });
        }
        if let Some(last) = self.samples.last() {
            if t <= last.t {
                return Err(Error::NonMonotoneTime { t, last: last.t });
            }
        } else if let Some(a) = &self.anchor {
            if t < a.t0 - snap_eps(t) {
                return Err(Error::NonMonotoneTime { t, last: a.t0 });
            }
        }
        self.samples.push(Sample { t, x, xd: xdot });
        if !self.retain_all {
            self.prune(t);
        }
        Ok(())
    }

    fn prune(&mut self, t_new: f64) {
        let cutoff = t_new - self.max_lag;
        let idx = self
            .samples
            .partition_point(|s| s.t < cutoff - snap_eps(cutoff));
        // samples[idx - 1] is the left node of the cell containing the oldest
        // reachable query; keep a stencil margin behind it.
        let keep_from = idx.saturating_sub(1 + STENCIL_MARGIN);
        if keep_from >= PRUNE_BATCH {
            self.samples.drain(..keep_from);
        }
    }

    /// State at `t - lag` (`lag >= 0`).
    pub fn eval_state(&self, t: f64, lag: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.eval_state_abs_into(t - lag, &mut out)?;
        Ok(out)
    }

    /// Derivative at `t - lag` (`lag >= 0`), interpolated piecewise-linearly
    /// over stored derivative samples. At a stored sample the stored
    /// (right-hand) value is returned.
    pub fn eval_derivative(&self, t: f64, lag: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.eval_derivative_abs_into(t - lag, &mut out)?;
        Ok(out)
    }

    /// State at absolute time `q` written into `out`.
    pub(crate) fn eval_state_abs_into(&self, q: f64, out: &mut DVector<f64>) -> Result<()> {
        let mut hint = usize::MAX;
        self.eval_abs_hinted(q, out, Channel::State, &mut hint)
    }

    /// Derivative at absolute time `q` written into `out`.
    pub(crate) fn eval_derivative_abs_into(&self, q: f64, out: &mut DVector<f64>) -> Result<()> {
        let mut hint = usize::MAX;
        self.eval_abs_hinted(q, out, Channel::Derivative, &mut hint)
    }

    /// Hinted variants for monotone query sequences (quadrature): `hint`
    /// carries the last cell index across calls and is checked before the
    /// binary search.
    pub(crate) fn eval_state_abs_hinted(
        &self,
        q: f64,
        out: &mut DVector<f64>,
        hint: &mut usize,
    ) -> Result<()> {
        self.eval_abs_hinted(q, out, Channel::State, hint)
    }

    pub(crate) fn eval_derivative_abs_hinted(
        &self,
        q: f64,
        out: &mut DVector<f64>,
        hint: &mut usize,
    ) -> Result<()> {
        self.eval_abs_hinted(q, out, Channel::Derivative, hint)
    }

    fn out_of_span(&self, q: f64) -> Error {
        let (lo, hi) = self.span().unwrap_or((f64::NAN, f64::NAN));
        Error::QueryOutsideSpan { t: q, lo, hi }
    }

    fn eval_abs_hinted(
        &self,
        q: f64,
        out: &mut DVector<f64>,
        channel: Channel,
        hint: &mut usize,
    ) -> Result<()> {
        if !q.is_finite() {
            return Err(self.out_of_span(q));
        }
        if let Some(a) = &self.anchor {
            if q < a.t0 - snap_eps(q) || self.samples.is_empty() {
                let theta = q - a.t0;
                if theta < -self.max_lag - snap_eps(q) || theta > snap_eps(q) {
                    return Err(self.out_of_span(q));
                }
                let theta = theta.clamp(-self.max_lag, 0.0);
                out.copy_from(&match channel {
                    Channel::State => a.init.state(theta),
                    Channel::Derivative => a.init.derivative(theta),
                });
                return Ok(());
            }
        }
        match self.locate(q, hint) {
            Lookup::At(i) => {
                let s = &self.samples[i];
                out.copy_from(match channel {
                    Channel::State => &s.x,
                    Channel::Derivative => &s.xd,
                });
                Ok(())
            }
            Lookup::Cell(i, s) => {
                self.interpolate_cell(i, s, channel, out);
                Ok(())
            }
            Lookup::Before | Lookup::After => Err(self.out_of_span(q)),
        }
    }

    /// Locates `q` among the samples, preferring the hinted cell. The hint is
    /// updated to the located cell so that monotone non-decreasing query
    /// sequences walk forward without searching.
    pub(crate) fn locate(&self, q: f64, hint: &mut usize) -> Lookup {
        let n = self.samples.len();
        if n == 0 {
            return Lookup::Before;
        }
        let eps = snap_eps(q);
        // Fast path: q falls in the hinted cell or the one after it.
        let mut cell = usize::MAX;
        if *hint < n.saturating_sub(1) {
            for c in *hint..(*hint + 2).min(n - 1) {
                if self.samples[c].t <= q && q <= self.samples[c + 1].t {
                    cell = c;
                    break;
                }
            }
        }
        if cell == usize::MAX {
            let idx = self.samples.partition_point(|s| s.t < q);
            // idx: first sample with t >= q.
            if idx == 0 {
                if (self.samples[0].t - q).abs() <= eps {
                    *hint = 0;
                    return Lookup::At(0);
                }
                return Lookup::Before;
            }
            if idx == n {
                if (q - self.samples[n - 1].t).abs() <= eps {
                    *hint = n.saturating_sub(2);
                    return Lookup::At(n - 1);
                }
                return Lookup::After;
            }
            cell = idx - 1;
        }
        *hint = cell;
        let (t0, t1) = (self.samples[cell].t, self.samples[cell + 1].t);
        if (q - t0).abs() <= eps {
            return Lookup::At(cell);
        }
        if (q - t1).abs() <= eps {
            return Lookup::At(cell + 1);
        }
        Lookup::Cell(cell, (q - t0) / (t1 - t0))
    }

    fn interpolate_cell(&self, i: usize, s: f64, channel: Channel, out: &mut DVector<f64>) {
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        match channel {
            Channel::Derivative => {
                // Always piecewise-linear over stored derivative samples.
                out.copy_from(&a.xd);
                *out *= 1.0 - s;
                out.axpy(s, &b.xd, 1.0);
            }
            Channel::State => match self.interp {
                InterpMode::Linear => {
                    out.copy_from(&a.x);
                    *out *= 1.0 - s;
                    out.axpy(s, &b.x, 1.0);
                }
                InterpMode::CubicHermite => {
                    let h = b.t - a.t;
                    let s2 = s * s;
                    let s3 = s2 * s;
                    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                    let h10 = s3 - 2.0 * s2 + s;
                    let h01 = -2.0 * s3 + 3.0 * s2;
                    let h11 = s3 - s2;
                    out.copy_from(&a.x);
                    *out *= h00;
                    out.axpy(h * h10, &a.xd, 1.0);
                    out.axpy(h01, &b.x, 1.0);
                    out.axpy(h * h11, &b.xd, 1.0);
                }
            },
        }
    }

    /// Writes the committed samples as CSV with header
    /// `t,x_0..x_{n-1},xdot_0..xdot_{n-1}` and floats at 17 significant
    /// digits. The initial-history segment is a callable, not samples, and is
    /// not exported.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "t")?;
        for j in 0..self.dim {
            write!(w, ",x_{j}")?;
        }
        for j in 0..self.dim {
            write!(w, ",xdot_{j}")?;
        }
        writeln!(w)?;
        for s in &self.samples {
            write!(w, "{:.16e}", s.t)?;
            for j in 0..self.dim {
                write!(w, ",{:.16e}", s.x[j])?;
            }
            for j in 0..self.dim {
                write!(w, ",{:.16e}", s.xd[j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Channel {
    State,
    Derivative,
}

// ─── tests ───────────────────────────────────────────────────────────────────
