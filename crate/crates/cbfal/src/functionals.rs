//! Barrier functionals over the history space: evaluation contexts, weight
//! decompositions, derivative splitting, degree-two extension, and relative
//! degree classification.
//!
//! A functional `H` maps a history segment to a scalar; the safe set is its
//! nonnegative superlevel set. Along solutions its derivative decomposes into
//! a lag-zero weight against `xdot(t)`, point-delay weights against
//! `xdot(t - tau_j)`, and distributed kernels integrated against the
//! derivative segment. Substituting the control-affine dynamics for
//! `xdot(t)` splits the derivative into a drift part and an input part; that
//! split is what the safety filter consumes.
//!
//! The distributed contribution can be evaluated three ways, in order of
//! preference: a user-supplied closed form, an integration-by-parts rewrite
//! built from the kernel's theta-derivative (which trades the derivative
//! segment for boundary terms plus a state integral), or direct quadrature
//! against the interpolated derivative channel. Only the first two keep the
//! evaluation meaningful at the live boundary where `xdot(t)` is not yet
//! committed.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::history::{HistoryWindow, InterpMode, SNAP_REL};
use crate::integrator::ControlAffinePlant;
use crate::{Error, NotExtendableReason, Result};

/// Scalar-valued functional of the evaluation context.
pub type ValueFn = Box<dyn Fn(&EvalCtx<'_>) -> Result<f64> + Send + Sync>;
/// Row-vector weight (gradient factor) of the evaluation context.
pub type WeightFn = Box<dyn Fn(&EvalCtx<'_>) -> Result<RowDVector<f64>> + Send + Sync>;
/// Distributed kernel: row-vector weight at shifted time `theta` in
/// `[-sigma1, -sigma2]`.
pub type KernelFn = Box<dyn Fn(&EvalCtx<'_>, f64) -> Result<RowDVector<f64>> + Send + Sync>;

fn snap_eps(q: f64) -> f64 {
    SNAP_REL * (1.0 + q.abs())
}

// ─── evaluation context ──────────────────────────────────────────────────────

/// Quadrature rule for distributed terms.
///
/// Nodes are laid on the window grid (spacing from the grid hint), so on
/// aligned configurations every node hits a stored sample and the rule's
/// classical order applies to the committed data itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadratureRule {
    /// Composite trapezoid; error `O(h^2)`, matching the interpolation error
    /// of the derivative channel. The default.
    #[default]
    Trapezoid,
    /// Composite Simpson; uses one extra node when the interval count is odd.
    Simpson,
}

/// A not-yet-committed head state overlaid on the committed window during
/// right-hand-side evaluation.
struct Head<'a> {
    x: &'a DVector<f64>,
    xdot: Option<&'a DVector<f64>>,
}

/// A view of one history segment: the committed window, the current time, and
/// optionally a provisional head state (an integration stage point).
///
/// All functional and plant closures read through this type. Shifted-time
/// queries use the source convention `theta <= 0`, so `state_at(0.0)` is the
/// current state and `state_at(-tau)` the state `tau` ago.
pub struct EvalCtx<'a> {
    window: &'a HistoryWindow,
    t: f64,
    head: Option<Head<'a>>,
    quadrature: QuadratureRule,
}

impl<'a> EvalCtx<'a> {
    /// Context at time `t` reading committed data only.
    pub fn at(window: &'a HistoryWindow, t: f64) -> Self {
        Self {
            window,
            t,
            head: None,
            quadrature: QuadratureRule::Trapezoid,
        }
    }

    /// Context at time `t` whose lag-zero state is the provisional `x` rather
    /// than a committed sample. Lag-zero derivative queries fail with
    /// [`Error::MissingDerivativeHistory`]: the right-hand side being
    /// evaluated would itself define that value.
    pub fn with_head(window: &'a HistoryWindow, t: f64, x: &'a DVector<f64>) -> Self {
        assert_eq!(x.len(), window.dim(), "head state dimension mismatch");
        Self {
            window,
            t,
            head: Some(Head { x, xdot: None }),
            quadrature: QuadratureRule::Trapezoid,
        }
    }

    /// Like [`with_head`](Self::with_head) but with a known head derivative,
    /// for diagnostics evaluated after the closed-loop right-hand side at the
    /// head has been computed.
    pub fn with_head_derivative(
        window: &'a HistoryWindow,
        t: f64,
        x: &'a DVector<f64>,
        xdot: &'a DVector<f64>,
    ) -> Self {
        assert_eq!(x.len(), window.dim(), "head state dimension mismatch");
        assert_eq!(
            xdot.len(),
            window.dim(),
            "head derivative dimension mismatch"
        );
        Self {
            window,
            t,
            head: Some(Head {
                x,
                xdot: Some(xdot),
            }),
            quadrature: QuadratureRule::Trapezoid,
        }
    }

    /// Selects the quadrature rule for distributed terms.
    pub fn with_quadrature(mut self, rule: QuadratureRule) -> Self {
        self.quadrature = rule;
        self
    }

    /// Current time.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    /// The committed window under this context.
    pub fn window(&self) -> &HistoryWindow {
        self.window
    }

    /// State at shifted time `theta <= 0`.
    pub fn state_at(&self, theta: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        let mut hint = usize::MAX;
        self.state_at_into(theta, &mut out, &mut hint)?;
        Ok(out)
    }

    /// Derivative at shifted time `theta <= 0`. At `theta = 0` this is the
    /// head derivative when one was supplied, the committed sample when the
    /// context sits on committed data, and an error otherwise.
    pub fn derivative_at(&self, theta: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        let mut hint = usize::MAX;
        self.derivative_at_into(theta, &mut out, &mut hint)?;
        Ok(out)
    }

    fn state_at_into(&self, theta: f64, out: &mut DVector<f64>, hint: &mut usize) -> Result<()> {
        let q = self.t + theta;
        if let Some(head) = &self.head {
            if theta.abs() <= snap_eps(self.t) {
                out.copy_from(head.x);
                return Ok(());
            }
            if let Some((tl, xl, _)) = self.window.last_sample() {
                if q > tl + snap_eps(q) {
                    // Between the newest committed sample and the head: only
                    // reachable when a lag smaller than the grid step is
                    // queried mid-step; conforming configurations align lags
                    // to the grid and never land here. Linear blend.
                    let s = (q - tl) / (self.t - tl);
                    out.copy_from(xl);
                    *out *= 1.0 - s;
                    out.axpy(s, head.x, 1.0);
                    return Ok(());
                }
            }
        }
        self.window.eval_state_abs_hinted(q, out, hint)
    }

    fn derivative_at_into(
        &self,
        theta: f64,
        out: &mut DVector<f64>,
        hint: &mut usize,
    ) -> Result<()> {
        let q = self.t + theta;
        if let Some(head) = &self.head {
            // The head owns queries past committed coverage. `span` counts the
            // anchor, so a freshly anchored window (no samples yet, as on the
            // very first step) still serves pre-horizon queries itself.
            let gap_start = self
                .window
                .span()
                .is_none_or(|(_, hi)| q > hi + snap_eps(q));
            if theta.abs() <= snap_eps(self.t) || gap_start {
                return match head.xdot {
                    Some(d) if theta.abs() <= snap_eps(self.t) => {
                        out.copy_from(d);
                        Ok(())
                    }
                    _ => Err(Error::MissingDerivativeHistory { t: q }),
                };
            }
        }
        self.window.eval_derivative_abs_hinted(q, out, hint)
    }

    /// Node count for quadrature over an interval of width `width`: one cell
    /// per grid step, from the window's grid hint. Falls back to 64 cells for
    /// standalone windows without a hint.
    fn node_layout(&self, width: f64) -> (usize, f64) {
        let gdt = self
            .window
            .grid_step()
            .filter(|d| *d > 0.0)
            .unwrap_or(width / 64.0);
        let mut cells = ((width / gdt).round() as usize).max(1);
        if self.quadrature == QuadratureRule::Simpson && cells % 2 == 1 {
            cells += 1;
        }
        (cells, width / cells as f64)
    }

    fn node_weight(&self, i: usize, cells: usize, h: f64) -> f64 {
        match self.quadrature {
            QuadratureRule::Trapezoid => {
                if i == 0 || i == cells {
                    0.5 * h
                } else {
                    h
                }
            }
            QuadratureRule::Simpson => {
                let c = if i == 0 || i == cells {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            }
        }
    }

    /// Integrates `f(theta, x(t + theta))` over `theta` in
    /// `[-sigma1, -sigma2]`.
    pub fn integrate_state(
        &self,
        sigma1: f64,
        sigma2: f64,
        mut f: impl FnMut(f64, &DVector<f64>) -> f64,
    ) -> Result<f64> {
        self.check_interval(sigma1, sigma2)?;
        let (cells, h) = self.node_layout(sigma1 - sigma2);
        let mut scratch = DVector::zeros(self.dim());
        let mut hint = usize::MAX;
        let mut acc = 0.0;
        for i in 0..=cells {
            let theta = -sigma1 + i as f64 * h;
            self.state_at_into(theta, &mut scratch, &mut hint)?;
            acc += self.node_weight(i, cells, h) * f(theta, &scratch);
        }
        Ok(acc)
    }

    /// Integrates `f(theta, xdot(t + theta))` over `theta` in
    /// `[-sigma1, -sigma2]`. Fails like [`derivative_at`](Self::derivative_at)
    /// when a node needs uncommitted derivative data.
    pub fn integrate_derivative(
        &self,
        sigma1: f64,
        sigma2: f64,
        mut f: impl FnMut(f64, &DVector<f64>) -> f64,
    ) -> Result<f64> {
        self.check_interval(sigma1, sigma2)?;
        let (cells, h) = self.node_layout(sigma1 - sigma2);
        let mut scratch = DVector::zeros(self.dim());
        let mut hint = usize::MAX;
        let mut acc = 0.0;
        for i in 0..=cells {
            let theta = -sigma1 + i as f64 * h;
            self.derivative_at_into(theta, &mut scratch, &mut hint)?;
            acc += self.node_weight(i, cells, h) * f(theta, &scratch);
        }
        Ok(acc)
    }

    /// Integrates a vector-valued integrand over `theta` in
    /// `[-sigma1, -sigma2]`; `f` writes the integrand for `(theta, x(t +
    /// theta))` into its output argument.
    pub fn integrate_state_vec(
        &self,
        sigma1: f64,
        sigma2: f64,
        out_dim: usize,
        mut f: impl FnMut(f64, &DVector<f64>, &mut DVector<f64>) -> Result<()>,
    ) -> Result<DVector<f64>> {
        self.check_interval(sigma1, sigma2)?;
        let (cells, h) = self.node_layout(sigma1 - sigma2);
        let mut scratch = DVector::zeros(self.dim());
        let mut buf = DVector::zeros(out_dim);
        let mut acc = DVector::zeros(out_dim);
        let mut hint = usize::MAX;
        for i in 0..=cells {
            let theta = -sigma1 + i as f64 * h;
            self.state_at_into(theta, &mut scratch, &mut hint)?;
            f(theta, &scratch, &mut buf)?;
            acc.axpy(self.node_weight(i, cells, h), &buf, 1.0);
        }
        Ok(acc)
    }

    fn check_interval(&self, sigma1: f64, sigma2: f64) -> Result<()> {
        if !(sigma1.is_finite() && sigma2.is_finite() && sigma2 >= 0.0 && sigma1 > sigma2) {
            return Err(Error::InvalidConfig {
                reason: format!("invalid distributed interval [-{sigma1}, -{sigma2}]"),
            });
        }
        Ok(())
    }
}

// ─── delay structure and class-Ke functions ──────────────────────────────────

/// The delays a functional reads: sorted point lags, the hull of its
/// distributed intervals, and the largest lag overall.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayStructure {
    /// Point lags, strictly positive, ascending, deduplicated.
    pub point_lags: Vec<f64>,
    /// Hull `(sigma1, sigma2)` of the distributed intervals, `sigma1 >
    /// sigma2 >= 0`, when any distributed term is present.
    pub distributed_interval: Option<(f64, f64)>,
    /// Largest lag the functional reads; zero for an undelayed functional.
    pub max_lag: f64,
}

/// Descriptor telling reports and serialization what a class-Ke function is.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaDescriptor {
    /// `alpha(r) = gamma * r`.
    Linear { gamma: f64 },
    /// User-supplied shape known only by name.
    Custom { name: String },
}

/// Extended class-K function: strictly increasing with `alpha(0) = 0`,
/// defined on all of the real line. Carries its derivative for the extended
/// filter's chain rule.
#[derive(Clone)]
pub struct ClassKeFn {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    descriptor: AlphaDescriptor,
}

impl ClassKeFn {
    /// `alpha(r) = gamma * r` with `gamma > 0`.
    pub fn linear(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidClassKe {
                reason: format!("linear rate must be positive, got {gamma}"),
            });
        }
        Ok(Self {
            eval: Arc::new(move |r| gamma * r),
            derivative: Arc::new(move |_| gamma),
            descriptor: AlphaDescriptor::Linear { gamma },
        })
    }

    /// User-supplied shape; [`validate`](Self::validate) checks the defining
    /// properties on a grid.
    pub fn custom(
        name: &str,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(eval),
            derivative: Arc::new(derivative),
            descriptor: AlphaDescriptor::Custom { name: name.into() },
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        (self.derivative)(r)
    }

    pub fn descriptor(&self) -> &AlphaDescriptor {
        &self.descriptor
    }

    /// Checks `alpha(0) = 0` exactly, strict monotonicity, and sign matching
    /// on a 1001-point grid over `[-10, 10]`.
    pub fn validate(&self) -> Result<()> {
        if self.eval(0.0) != 0.0 {
            return Err(Error::InvalidClassKe {
                reason: format!("alpha(0) = {} instead of 0", self.eval(0.0)),
            });
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let r = -10.0 + 0.02 * i as f64;
            let v = self.eval(r);
            if !v.is_finite() {
                return Err(Error::InvalidClassKe {
                    reason: format!("alpha({r}) is not finite"),
                });
            }
            if v <= prev {
                return Err(Error::InvalidClassKe {
                    reason: format!("not strictly increasing near r = {r}"),
                });
            }
            if r != 0.0 && v.signum() != r.signum() && v != 0.0 {
                return Err(Error::InvalidClassKe {
                    reason: format!("sign mismatch at r = {r}: alpha = {v}"),
                });
            }
            prev = v;
        }
        Ok(())
    }
}

impl std::fmt::Debug for ClassKeFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClassKeFn({:?})", self.descriptor)
    }
}

// ─── functional specification ────────────────────────────────────────────────

/// A point-delay term of the derivative decomposition: weight against
/// `xdot(t - lag)`.
pub struct PointWeight {
    pub lag: f64,
    pub weight: WeightFn,
}

/// A distributed term of the derivative decomposition: kernel integrated
/// against the derivative segment over `[-sigma1, -sigma2]`, with optional
/// integration-by-parts data.
pub struct DistributedWeight {
    sigma1: f64,
    sigma2: f64,
    kernel: KernelFn,
    kernel_dtheta: Option<KernelFn>,
    closed_form: Option<ValueFn>,
}

impl DistributedWeight {
    pub fn new(sigma1: f64, sigma2: f64, kernel: KernelFn) -> Self {
        Self {
            sigma1,
            sigma2,
            kernel,
            kernel_dtheta: None,
            closed_form: None,
        }
    }

    /// Total theta-derivative of the kernel along the history, enabling the
    /// integration-by-parts rewrite.
    pub fn with_kernel_dtheta(mut self, kd: KernelFn) -> Self {
        self.kernel_dtheta = Some(kd);
        self
    }

    /// Exact value of the whole distributed term, bypassing quadrature
    /// against the derivative channel entirely.
    pub fn with_closed_form(mut self, cf: ValueFn) -> Self {
        self.closed_form = Some(cf);
        self
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// True when the term can be evaluated without the derivative segment.
    pub fn ibp_available(&self) -> bool {
        self.closed_form.is_some() || self.kernel_dtheta.is_some()
    }

    /// Kernel row at shifted time `theta`.
    pub fn kernel_at(&self, ctx: &EvalCtx<'_>, theta: f64) -> Result<RowDVector<f64>> {
        (self.kernel)(ctx, theta)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma1.is_finite() && self.sigma2.is_finite())
            || self.sigma2 < 0.0
            || self.sigma1 <= self.sigma2
        {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "distributed interval needs sigma1 > sigma2 >= 0, got ({}, {})",
                    self.sigma1, self.sigma2
                ),
            });
        }
        Ok(())
    }

    /// The drift contribution of this term, by the best available route:
    /// closed form, else integration by parts, else direct quadrature
    /// against the derivative channel.
    pub fn eval_drift_term(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        if let Some(cf) = &self.closed_form {
            return cf(ctx);
        }
        if self.kernel_dtheta.is_some() {
            return self.eval_drift_term_ibp(ctx);
        }
        self.eval_drift_term_raw(ctx)
    }

    /// Integration-by-parts route: boundary terms minus the state integral of
    /// the kernel's theta-derivative.
    pub fn eval_drift_term_ibp(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        let kd = self.kernel_dtheta.as_ref().ok_or(Error::NotExtendable {
            reason: NotExtendableReason::DistributedWithoutIbp,
        })?;
        let xb = ctx.state_at(-self.sigma2)?;
        let xa = ctx.state_at(-self.sigma1)?;
        let wb = (self.kernel)(ctx, -self.sigma2)?;
        let wa = (self.kernel)(ctx, -self.sigma1)?;
        let boundary = (&wb * &xb)[(0, 0)] - (&wa * &xa)[(0, 0)];
        let drift = ctx.integrate_state(self.sigma1, self.sigma2, |theta, x| {
            kd(ctx, theta).map_or(f64::NAN, |row| (row * x)[(0, 0)])
        })?;
        if !drift.is_finite() {
            return Err(Error::InvalidConfig {
                reason: "kernel theta-derivative evaluation failed inside quadrature".into(),
            });
        }
        Ok(boundary - drift)
    }

    /// Direct quadrature of kernel times interpolated derivative. Needs the
    /// full derivative segment; fails at a live boundary where
    /// `xdot(t)` is uncommitted and `sigma2 = 0`.
    pub fn eval_drift_term_raw(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        let raw = ctx.integrate_derivative(self.sigma1, self.sigma2, |theta, xd| {
            (self.kernel)(ctx, theta).map_or(f64::NAN, |row| (row * xd)[(0, 0)])
        })?;
        if !raw.is_finite() {
            return Err(Error::InvalidConfig {
                reason: "kernel evaluation failed inside quadrature".into(),
            });
        }
        Ok(raw)
    }
}

/// Barrier functional given by its value and the weight decomposition of its
/// derivative. Built through [`CbfalSpecBuilder`]; immutable afterwards and
/// safe to share across threads.
pub struct CbfalSpec {
    name: String,
    value: ValueFn,
    w0: Option<WeightFn>,
    point_weights: Vec<PointWeight>,
    dist_weights: Vec<DistributedWeight>,
    delays: DelayStructure,
    lf_decomposition: Option<Box<CbfalSpec>>,
}

/// Splitting of the functional's derivative against a control-affine plant:
/// full derivative is `lf + lg * u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDerivative {
    /// Drift part: everything that does not multiply the control.
    pub lf: f64,
    /// Input part: row vector multiplying `u`.
    pub lg: RowDVector<f64>,
}

impl CbfalSpec {
    pub fn builder(name: &str) -> CbfalSpecBuilder {
        CbfalSpecBuilder {
            name: name.into(),
            value: None,
            w0: None,
            point_weights: Vec::new(),
            dist_weights: Vec::new(),
            lf_decomposition: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn delays(&self) -> &DelayStructure {
        &self.delays
    }

    /// Whether a lag-zero weight was declared. `false` means the weight is
    /// identically zero by construction, not merely unobserved.
    pub fn has_w0(&self) -> bool {
        self.w0.is_some()
    }

    pub fn point_weights(&self) -> &[PointWeight] {
        &self.point_weights
    }

    pub fn dist_weights(&self) -> &[DistributedWeight] {
        &self.dist_weights
    }

    /// The drift derivative's own decomposition, when supplied.
    pub fn lf_decomposition(&self) -> Option<&CbfalSpec> {
        self.lf_decomposition.as_deref()
    }

    /// Value `H(x_t)`.
    pub fn eval_value(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        (self.value)(ctx)
    }

    /// Lag-zero weight row, or `None` when declared zero.
    pub fn eval_w0(&self, ctx: &EvalCtx<'_>) -> Result<Option<RowDVector<f64>>> {
        self.w0.as_ref().map(|w| w(ctx)).transpose()
    }

    /// Splits the derivative along `plant` into drift and input parts:
    /// `Hdot = lf + lg * u`. Point and distributed terms contribute to the
    /// drift only; the input enters through the lag-zero weight against `G`.
    pub fn eval_split_derivative(
        &self,
        plant: &ControlAffinePlant,
        ctx: &EvalCtx<'_>,
    ) -> Result<SplitDerivative> {
        let mut lf = 0.0;
        let lg = if let Some(w0) = &self.w0 {
            let w = w0(ctx)?;
            if w.len() != plant.state_dim() {
                return Err(Error::DimensionMismatch {
                    expected: plant.state_dim(),
                    got: w.len(),
                });
            }
            let fv = plant.eval_f(ctx)?;
            lf += (&w * &fv)[(0, 0)];
            &w * &plant.eval_g(ctx)?
        } else {
            RowDVector::zeros(plant.input_dim())
        };
        for pw in &self.point_weights {
            let w = (pw.weight)(ctx)?;
            let xd = ctx.derivative_at(-pw.lag)?;
            lf += (&w * &xd)[(0, 0)];
        }
        for d in &self.dist_weights {
            lf += d.eval_drift_term(ctx)?;
        }
        Ok(SplitDerivative { lf, lg })
    }
}

impl std::fmt::Debug for CbfalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CbfalSpec")
            .field("name", &self.name)
            .field("has_w0", &self.w0.is_some())
            .field("point_lags", &self.delays.point_lags)
            .field("distributed_interval", &self.delays.distributed_interval)
            .field("has_lf_decomposition", &self.lf_decomposition.is_some())
            .finish()
    }
}

/// Builder for [`CbfalSpec`]; `build` seals the delay structure and validates
/// it.
pub struct CbfalSpecBuilder {
    name: String,
    value: Option<ValueFn>,
    w0: Option<WeightFn>,
    point_weights: Vec<PointWeight>,
    dist_weights: Vec<DistributedWeight>,
    lf_decomposition: Option<Box<CbfalSpec>>,
}

impl CbfalSpecBuilder {
    pub fn value(mut self, f: ValueFn) -> Self {
        self.value = Some(f);
        self
    }

    /// Declares the lag-zero weight. Leaving it undeclared asserts the weight
    /// is identically zero.
    pub fn w0(mut self, f: WeightFn) -> Self {
        self.w0 = Some(f);
        self
    }

    pub fn point_weight(mut self, lag: f64, f: WeightFn) -> Self {
        self.point_weights.push(PointWeight { lag, weight: f });
        self
    }

    pub fn distributed(mut self, d: DistributedWeight) -> Self {
        self.dist_weights.push(d);
        self
    }

    /// Supplies the decomposition of the drift derivative as a functional in
    /// its own right, enabling degree-two extension.
    pub fn lf_decomposition(mut self, spec: CbfalSpec) -> Self {
        self.lf_decomposition = Some(Box::new(spec));
        self
    }

    pub fn build(self) -> Result<CbfalSpec> {
        let value = self.value.ok_or_else(|| Error::InvalidConfig {
            reason: format!("functional {:?} has no value closure", self.name),
        })?;
        let mut point_lags: Vec<f64> = Vec::new();
        for pw in &self.point_weights {
            if !(pw.lag.is_finite() && pw.lag > 0.0) {
                return Err(Error::InvalidConfig {
                    reason: format!("point lag must be positive and finite, got {}", pw.lag),
                });
            }
            point_lags.push(pw.lag);
        }
        point_lags.sort_by(f64::total_cmp);
        point_lags.dedup();
        let mut hull: Option<(f64, f64)> = None;
        for d in &self.dist_weights {
            d.validate()?;
            hull = Some(match hull {
                None => (d.sigma1, d.sigma2),
                Some((s1, s2)) => (s1.max(d.sigma1), s2.min(d.sigma2)),
            });
        }
        let max_lag = point_lags
            .iter()
            .copied()
            .chain(hull.map(|(s1, _)| s1))
            .fold(0.0, f64::max);
        Ok(CbfalSpec {
            name: self.name,
            value,
            w0: self.w0,
            point_weights: self.point_weights,
            dist_weights: self.dist_weights,
            delays: DelayStructure {
                point_lags,
                distributed_interval: hull,
                max_lag,
            },
            lf_decomposition: self.lf_decomposition,
        })
    }
}

// ─── degree-two extension ────────────────────────────────────────────────────

/// Degree-two functional: the base plus the class-Ke rate entering the
/// auxiliary functional `He = LfH + alpha(H)`.
pub struct ExtendedSpec {
    base: CbfalSpec,
    alpha: ClassKeFn,
}

/// Checks the structural preconditions for a degree-two extension and pairs
/// the functional with its rate.
///
/// Required: no point-delay weight (its derivative would read a second
/// derivative of the history, leaving the class of retarded dynamics), every
/// distributed term rewritable without the derivative segment, and a supplied
/// decomposition of the drift derivative.
pub fn extend(spec: CbfalSpec, alpha: ClassKeFn) -> Result<ExtendedSpec> {
    alpha.validate()?;
    if let Some(pw) = spec.point_weights.first() {
        return Err(Error::NotExtendable {
            reason: NotExtendableReason::NonzeroPointWeight { lag: pw.lag },
        });
    }
    if spec.dist_weights.iter().any(|d| !d.ibp_available()) {
        return Err(Error::NotExtendable {
            reason: NotExtendableReason::DistributedWithoutIbp,
        });
    }
    if spec.lf_decomposition.is_none() {
        return Err(Error::NotExtendable {
            reason: NotExtendableReason::MissingLfDecomposition,
        });
    }
    Ok(ExtendedSpec { base: spec, alpha })
}

impl ExtendedSpec {
    pub fn base(&self) -> &CbfalSpec {
        &self.base
    }

    pub fn alpha(&self) -> &ClassKeFn {
        &self.alpha
    }

    /// Value of the base functional.
    pub fn h(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        self.base.eval_value(ctx)
    }

    /// Drift derivative of the base functional along the plant.
    pub fn lf_h(&self, plant: &ControlAffinePlant, ctx: &EvalCtx<'_>) -> Result<f64> {
        Ok(self.base.eval_split_derivative(plant, ctx)?.lf)
    }

    /// Auxiliary functional `He = LfH + alpha(H)`.
    pub fn he(&self, plant: &ControlAffinePlant, ctx: &EvalCtx<'_>) -> Result<f64> {
        Ok(self.lf_h(plant, ctx)? + self.alpha.eval(self.base.eval_value(ctx)?))
    }

    /// Second-order split `(Lf^2 H, LgLf H)` from the supplied drift
    /// decomposition.
    pub fn second_split(
        &self,
        plant: &ControlAffinePlant,
        ctx: &EvalCtx<'_>,
    ) -> Result<SplitDerivative> {
        let lf_spec = self.base.lf_decomposition().ok_or(Error::NotExtendable {
            reason: NotExtendableReason::MissingLfDecomposition,
        })?;
        lf_spec.eval_split_derivative(plant, ctx)
    }
}

impl std::fmt::Debug for ExtendedSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtendedSpec")
            .field("base", &self.base)
            .field("alpha", &self.alpha)
            .finish()
    }
}

/// A barrier functional handle of either degree, cheap to clone and share.
#[derive(Clone)]
pub enum Functional {
    Standard(Arc<CbfalSpec>),
    Extended(Arc<ExtendedSpec>),
}

impl Functional {
    /// The underlying base functional.
    pub fn spec(&self) -> &CbfalSpec {
        match self {
            Functional::Standard(s) => s,
            Functional::Extended(e) => e.base(),
        }
    }

    /// Value of the base functional.
    pub fn h(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        self.spec().eval_value(ctx)
    }

    /// Auxiliary value `He` for extended functionals, `None` otherwise.
    pub fn he(&self, plant: &ControlAffinePlant, ctx: &EvalCtx<'_>) -> Result<Option<f64>> {
        match self {
            Functional::Standard(_) => Ok(None),
            Functional::Extended(e) => e.he(plant, ctx).map(Some),
        }
    }
}

// ─── relative degree classification ──────────────────────────────────────────

/// Outcome of probing the input path of a functional along a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelativeDegree {
    /// `LgH` is nonzero somewhere: the standard filter applies.
    DegreeOne,
    /// `LgH` vanished on every probe and the structure admits an extension
    /// whose input path `LgLfH` is nonzero somewhere: extended filter
    /// candidate.
    DegreeTwoCandidate,
    /// The lag-zero weight is identically zero while a point-delay weight is
    /// not: differentiating further meets a second derivative of the history
    /// and no relative degree exists in the retarded class.
    InvalidNoDegree,
    /// Probing was inconclusive.
    Unknown,
}

/// Threshold below which a probed input-path row counts as zero. Probes use
/// unit-scale histories, so this separates structural zeros (which vanish to
/// rounding) from generic values.
const PROBE_ZERO_TOL: f64 = 1e-9;

/// Number of built-in probe histories.
const PROBE_COUNT: usize = 64;

/// Seed for the built-in probe ensemble.
const PROBE_SEED: u64 = 0x5eed_cbfa;

/// Smooth random trajectory windows for probing: each is a truncated Fourier
/// series with coefficients drawn from the seeded generator, committed at 64
/// samples per `span` with its exact derivative.
pub fn probe_windows(dim: usize, span: f64, count: usize, seed: u64) -> Vec<HistoryWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = std::f64::consts::PI / span;
    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let offsets: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sin_c = vec![[0.0; 3]; dim];
        let mut cos_c = vec![[0.0; 3]; dim];
        for i in 0..dim {
            for k in 0..3 {
                let scale = 0.5 / (k + 1) as f64;
                sin_c[i][k] = rng.random_range(-scale..scale);
                cos_c[i][k] = rng.random_range(-scale..scale);
            }
        }
        let state = {
            let offsets = offsets.clone();
            let sin_c = sin_c.clone();
            let cos_c = cos_c.clone();
            move |t: f64| {
                DVector::from_fn(offsets.len(), |i, _| {
                    let mut v = offsets[i];
                    for k in 0..3 {
                        let w = (k + 1) as f64 * omega;
                        v += sin_c[i][k] * (w * t).sin() + cos_c[i][k] * (w * t).cos();
                    }
                    v
                })
            }
        };
        let deriv = move |t: f64| {
            DVector::from_fn(offsets.len(), |i, _| {
                let mut v = 0.0;
                for k in 0..3 {
                    let w = (k + 1) as f64 * omega;
                    v += w * (sin_c[i][k] * (w * t).cos() - cos_c[i][k] * (w * t).sin());
                }
                v
            })
        };
        let mut w = HistoryWindow::new(dim, span, InterpMode::CubicHermite)
            .expect("probe window construction cannot fail for dim >= 1");
        let cells = 64;
        let h = span / cells as f64;
        for j in 0..=cells {
            let t = -span + j as f64 * h;
            w.append(t, state(t), deriv(t))
                .expect("probe times are strictly increasing");
        }
        w.set_grid_hint(h);
        windows.push(w);
    }
    windows
}

/// Classifies the relative degree of `spec` along `plant` using the built-in
/// probe ensemble.
pub fn classify_relative_degree(spec: &CbfalSpec, plant: &ControlAffinePlant) -> RelativeDegree {
    let span = spec.delays().max_lag.max(plant.max_internal_lag()).max(1.0);
    let windows = probe_windows(plant.state_dim(), span, PROBE_COUNT, PROBE_SEED);
    classify_with_windows(spec, plant, &windows)
}

/// Classifies the relative degree using the supplied probe windows (each
/// evaluated at its newest sample time). Scenario initial histories can be
/// added to the ensemble this way.
pub fn classify_with_windows(
    spec: &CbfalSpec,
    plant: &ControlAffinePlant,
    windows: &[HistoryWindow],
) -> RelativeDegree {
    // The input path LgH = w0 * G: identically zero by declaration, or
    // probed.
    let lg_nonzero = spec.has_w0() && probe_lg(spec, plant, windows, false);
    if lg_nonzero {
        return RelativeDegree::DegreeOne;
    }
    if !spec.has_w0() && !spec.point_weights.is_empty() {
        return RelativeDegree::InvalidNoDegree;
    }
    let extendable_shape = spec.point_weights.is_empty()
        && spec.dist_weights.iter().all(|d| d.ibp_available())
        && spec.lf_decomposition.is_some();
    if extendable_shape {
        // Candidate only if the second-order input path shows life.
        if probe_lg(spec, plant, windows, true) {
            return RelativeDegree::DegreeTwoCandidate;
        }
    }
    RelativeDegree::Unknown
}

/// True when `LgH` (or `LgLfH` for `second = true`) exceeds the probe
/// threshold on some evaluable window.
fn probe_lg(
    spec: &CbfalSpec,
    plant: &ControlAffinePlant,
    windows: &[HistoryWindow],
    second: bool,
) -> bool {
    let target = if second {
        match spec.lf_decomposition() {
            Some(s) => s,
            None => return false,
        }
    } else {
        spec
    };
    for w in windows {
        let Some(t) = w.last_time() else { continue };
        let ctx = EvalCtx::at(w, t);
        if let Ok(split) = target.eval_split_derivative(plant, &ctx) {
            if split.lg.amax() > PROBE_ZERO_TOL {
                return true;
            }
        }
    }
    false
}

// ─── general functional families ─────────────────────────────────────────────

type MatOfTheta = Box<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
type MatOfThetaChi = Box<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>;
type VecMap = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacMap = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Outer function over the argument list documented on
/// [`GeneralFunctionalSpec`].
pub type OuterFn = Box<dyn Fn(&[DVector<f64>]) -> f64 + Send + Sync>;
/// Gradient of the outer function with respect to one argument.
pub type OuterGradFn = Box<dyn Fn(&[DVector<f64>]) -> RowDVector<f64> + Send + Sync>;

/// Single-integral block `int_{-sigma1}^{-sigma2} rho(theta) kappa(x(t +
/// theta)) dtheta` feeding one argument of the outer function.
pub struct SingleIntegralBlock {
    pub sigma1: f64,
    pub sigma2: f64,
    /// Matrix kernel `rho(theta)`, `n x n`.
    pub rho: MatOfTheta,
    /// `d rho / d theta`; enables the closed-form drift of this block.
    pub rho_dtheta: Option<MatOfTheta>,
    /// Pointwise map `kappa`, `R^n -> R^n`.
    pub kappa: VecMap,
    /// Jacobian of `kappa`.
    pub kappa_jacobian: JacMap,
}

/// Double-integral block over `[-tau, 0]^2` of `omega(theta, chi) *
/// (mu(x(t + theta)) elementwise nu(x(t + chi)))`, feeding one argument of
/// the outer function. Both partial derivatives of `omega` are required: the
/// drift of this block moves the kernel along both axes, so the integrand's
/// drift term carries their sum.
pub struct DoubleIntegralBlock {
    pub tau: f64,
    pub omega: MatOfThetaChi,
    pub omega_dtheta: MatOfThetaChi,
    pub omega_dchi: MatOfThetaChi,
    pub mu: VecMap,
    pub nu: VecMap,
    pub mu_jacobian: JacMap,
    pub nu_jacobian: JacMap,
}

/// Functional family `H = h(x(t), x(t - tau_1), ..., x(t - tau_l), I_single,
/// I_double)` with user-supplied outer gradients.
///
/// Argument order for `outer` and `outer_grads`: current state, point-delay
/// states in the order of `point_lags`, then the single-integral value, then
/// the double-integral value (present blocks only).
pub struct GeneralFunctionalSpec {
    pub name: String,
    pub dim: usize,
    pub point_lags: Vec<f64>,
    pub outer: OuterFn,
    pub outer_grads: Vec<OuterGradFn>,
    pub single_block: Option<SingleIntegralBlock>,
    pub double_block: Option<DoubleIntegralBlock>,
}

impl GeneralFunctionalSpec {
    fn arg_count(&self) -> usize {
        1 + self.point_lags.len()
            + usize::from(self.single_block.is_some())
            + usize::from(self.double_block.is_some())
    }
}

/// Seed for the randomized gradient consistency check in
/// [`build_from_general`].
const GRADIENT_CHECK_SEED: u64 = 0x6e5a_d1e7;

/// Assembles the weight decomposition of a general-family functional and
/// returns it as a [`CbfalSpec`].
///
/// The lag-zero weight is the outer gradient at the current state; each
/// point-delay weight is the corresponding outer gradient; the single
/// integral contributes a distributed kernel `grad_h * rho(theta) *
/// kappa'(x)` (with a closed-form drift when `rho_dtheta` is supplied); the
/// double integral contributes a distributed kernel over `[-tau, 0]` plus a
/// mandatory closed-form drift built from boundary integrals and the summed
/// kernel drift `d omega/d theta + d omega/d chi`.
///
/// All supplied gradients are spot-checked against central finite differences
/// on seeded random inputs before assembly; a disagreement beyond 1e-5
/// relative fails with [`Error::GradientMismatch`].
pub fn build_from_general(g: GeneralFunctionalSpec) -> Result<CbfalSpec> {
    if g.outer_grads.len() != g.arg_count() {
        return Err(Error::InvalidConfig {
            reason: format!(
                "outer gradient count {} does not match argument count {}",
                g.outer_grads.len(),
                g.arg_count()
            ),
        });
    }
    check_gradients(&g)?;
    let name = g.name.clone();
    let g = Arc::new(g);

    let value: ValueFn = {
        let g = g.clone();
        Box::new(move |ctx| Ok((g.outer)(&collect_args(&g, ctx)?)))
    };
    let w0: WeightFn = {
        let g = g.clone();
        Box::new(move |ctx| Ok((g.outer_grads[0])(&collect_args(&g, ctx)?)))
    };

    let mut builder = CbfalSpec::builder(&name).value(value).w0(w0);
    for (j, &lag) in g.point_lags.iter().enumerate() {
        let g = g.clone();
        builder = builder.point_weight(
            lag,
            Box::new(move |ctx| Ok((g.outer_grads[1 + j])(&collect_args(&g, ctx)?))),
        );
    }

    if let Some(block) = &g.single_block {
        let idx = 1 + g.point_lags.len();
        let (sigma1, sigma2) = (block.sigma1, block.sigma2);
        let kernel: KernelFn = {
            let g = g.clone();
            Box::new(move |ctx, theta| {
                let block = g
                    .single_block
                    .as_ref()
                    .expect("block present by construction");
                let grad = (g.outer_grads[idx])(&collect_args(&g, ctx)?);
                let x = ctx.state_at(theta)?;
                Ok(grad * (block.rho)(theta) * (block.kappa_jacobian)(&x))
            })
        };
        let mut dw = DistributedWeight::new(sigma1, sigma2, kernel);
        if g.single_block.as_ref().unwrap().rho_dtheta.is_some() {
            let g = g.clone();
            dw = dw.with_closed_form(Box::new(move |ctx| {
                let block = g
                    .single_block
                    .as_ref()
                    .expect("block present by construction");
                let rho_d = block.rho_dtheta.as_ref().expect("checked before capture");
                let grad = (g.outer_grads[idx])(&collect_args(&g, ctx)?);
                let xb = ctx.state_at(-block.sigma2)?;
                let xa = ctx.state_at(-block.sigma1)?;
                let boundary = (block.rho)(-block.sigma2) * (block.kappa)(&xb)
                    - (block.rho)(-block.sigma1) * (block.kappa)(&xa);
                let drift = ctx.integrate_state_vec(
                    block.sigma1,
                    block.sigma2,
                    ctx.dim(),
                    |theta, x, out| {
                        out.copy_from(&(rho_d(theta) * (block.kappa)(x)));
                        Ok(())
                    },
                )?;
                Ok((&grad * (boundary - drift))[(0, 0)])
            }));
        }
        builder = builder.distributed(dw);
    }

    if let Some(block) = &g.double_block {
        let idx = 1 + g.point_lags.len() + usize::from(g.single_block.is_some());
        let tau = block.tau;
        // Raw kernel of the derivative-segment form: at shifted time s the
        // integrand's derivative factor collects contributions from both
        // axes of the double integral.
        let kernel: KernelFn = {
            let g = g.clone();
            Box::new(move |ctx, s| {
                let block = g
                    .double_block
                    .as_ref()
                    .expect("block present by construction");
                let grad = (g.outer_grads[idx])(&collect_args(&g, ctx)?);
                let xs = ctx.state_at(s)?;
                let n = ctx.dim();
                // r1_k = int (grad * omega(s, chi))_k nu_k(x(chi)) dchi
                let r1 = ctx.integrate_state_vec(block.tau, 0.0, n, |chi, xchi, out| {
                    let gw = &grad * (block.omega)(s, chi);
                    let nv = (block.nu)(xchi);
                    for k in 0..n {
                        out[k] = gw[k] * nv[k];
                    }
                    Ok(())
                })?;
                // r2_k = int (grad * omega(theta, s))_k mu_k(x(theta)) dtheta
                let r2 = ctx.integrate_state_vec(block.tau, 0.0, n, |theta, xtheta, out| {
                    let gw = &grad * (block.omega)(theta, s);
                    let mv = (block.mu)(xtheta);
                    for k in 0..n {
                        out[k] = gw[k] * mv[k];
                    }
                    Ok(())
                })?;
                Ok(r1.transpose() * (block.mu_jacobian)(&xs)
                    + r2.transpose() * (block.nu_jacobian)(&xs))
            })
        };
        let closed_form: ValueFn = {
            let g = g.clone();
            Box::new(move |ctx| {
                let block = g
                    .double_block
                    .as_ref()
                    .expect("block present by construction");
                let grad = (g.outer_grads[idx])(&collect_args(&g, ctx)?);
                let n = ctx.dim();
                let x_now = ctx.state_at(0.0)?;
                let x_tau = ctx.state_at(-block.tau)?;
                let mu_now = (block.mu)(&x_now);
                let mu_tau = (block.mu)(&x_tau);
                let nu_now = (block.nu)(&x_now);
                let nu_tau = (block.nu)(&x_tau);
                // Boundary sweep along theta: kernel rows at theta = 0 and
                // theta = -tau integrated over chi.
                let theta_boundary =
                    ctx.integrate_state_vec(block.tau, 0.0, n, |chi, xchi, out| {
                        let nv = (block.nu)(xchi);
                        let lead = (block.omega)(0.0, chi) * mu_now.component_mul(&nv);
                        let trail = (block.omega)(-block.tau, chi) * mu_tau.component_mul(&nv);
                        out.copy_from(&(lead - trail));
                        Ok(())
                    })?;
                // Boundary sweep along chi.
                let chi_boundary =
                    ctx.integrate_state_vec(block.tau, 0.0, n, |theta, xtheta, out| {
                        let mv = (block.mu)(xtheta);
                        let lead = (block.omega)(theta, 0.0) * mv.component_mul(&nu_now);
                        let trail = (block.omega)(theta, -block.tau) * mv.component_mul(&nu_tau);
                        out.copy_from(&(lead - trail));
                        Ok(())
                    })?;
                // Kernel drift: the time shift moves omega along both axes.
                let drift = ctx.integrate_state_vec(block.tau, 0.0, n, |theta, xtheta, out| {
                    let mv = (block.mu)(xtheta);
                    let inner = ctx.integrate_state_vec(block.tau, 0.0, n, |chi, xchi, o2| {
                        let nv = (block.nu)(xchi);
                        let wsum =
                            (block.omega_dtheta)(theta, chi) + (block.omega_dchi)(theta, chi);
                        o2.copy_from(&(wsum * mv.component_mul(&nv)));
                        Ok(())
                    })?;
                    out.copy_from(&inner);
                    Ok(())
                })?;
                Ok((&grad * (theta_boundary + chi_boundary - drift))[(0, 0)])
            })
        };
        builder = builder
            .distributed(DistributedWeight::new(tau, 0.0, kernel).with_closed_form(closed_form));
    }

    builder.build()
}

/// Gathers the outer-function arguments at the context.
fn collect_args(g: &GeneralFunctionalSpec, ctx: &EvalCtx<'_>) -> Result<Vec<DVector<f64>>> {
    let mut args = Vec::with_capacity(g.arg_count());
    args.push(ctx.state_at(0.0)?);
    for &lag in &g.point_lags {
        args.push(ctx.state_at(-lag)?);
    }
    if let Some(block) = &g.single_block {
        args.push(ctx.integrate_state_vec(
            block.sigma1,
            block.sigma2,
            ctx.dim(),
            |theta, x, out| {
                out.copy_from(&((block.rho)(theta) * (block.kappa)(x)));
                Ok(())
            },
        )?);
    }
    if let Some(block) = &g.double_block {
        let n = ctx.dim();
        args.push(
            ctx.integrate_state_vec(block.tau, 0.0, n, |theta, xtheta, out| {
                let mv = (block.mu)(xtheta);
                let inner = ctx.integrate_state_vec(block.tau, 0.0, n, |chi, xchi, o2| {
                    let nv = (block.nu)(xchi);
                    o2.copy_from(&((block.omega)(theta, chi) * mv.component_mul(&nv)));
                    Ok(())
                })?;
                out.copy_from(&inner);
                Ok(())
            })?,
        );
    }
    Ok(args)
}

/// Spot-checks every supplied gradient against central finite differences on
/// seeded random inputs.
fn check_gradients(g: &GeneralFunctionalSpec) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(GRADIENT_CHECK_SEED);
    let n = g.dim;
    let args_count = g.arg_count();
    let fd_h = 1e-6;
    let tol = 1e-5;
    for _ in 0..4 {
        let mut args: Vec<DVector<f64>> = (0..args_count)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-0.8..0.8)))
            .collect();
        for (j, grad_fn) in g.outer_grads.iter().enumerate() {
            let grad = grad_fn(&args);
            if grad.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: grad.len(),
                });
            }
            let scale = 1.0 + grad.amax();
            for c in 0..n {
                let orig = args[j][c];
                args[j][c] = orig + fd_h;
                let hi = (g.outer)(&args);
                args[j][c] = orig - fd_h;
                let lo = (g.outer)(&args);
                args[j][c] = orig;
                let fd = (hi - lo) / (2.0 * fd_h);
                let err = (fd - grad[c]).abs() / scale;
                if err > tol {
                    return Err(Error::GradientMismatch {
                        component: format!("outer gradient {j}, column {c}"),
                        rel_err: err,
                    });
                }
            }
        }
        let x = DVector::from_fn(n, |_, _| rng.random_range(-0.8..0.8));
        if let Some(block) = &g.single_block {
            check_jacobian("kappa", &block.kappa, &block.kappa_jacobian, &x, fd_h, tol)?;
            if let Some(rho_d) = &block.rho_dtheta {
                let theta = -rng.random_range(block.sigma2..block.sigma1);
                check_theta_derivative("rho", &block.rho, rho_d, theta, fd_h, tol)?;
            }
        }
        if let Some(block) = &g.double_block {
            check_jacobian("mu", &block.mu, &block.mu_jacobian, &x, fd_h, tol)?;
            check_jacobian("nu", &block.nu, &block.nu_jacobian, &x, fd_h, tol)?;
            let theta = -rng.random_range(0.0..block.tau);
            let chi = -rng.random_range(0.0..block.tau);
            let fd = ((block.omega)(theta + fd_h, chi) - (block.omega)(theta - fd_h, chi))
                / (2.0 * fd_h);
            let an = (block.omega_dtheta)(theta, chi);
            let err = (&fd - &an).amax() / (1.0 + an.amax());
            if err > tol {
                return Err(Error::GradientMismatch {
                    component: "omega theta-derivative".into(),
                    rel_err: err,
                });
            }
            let fd = ((block.omega)(theta, chi + fd_h) - (block.omega)(theta, chi - fd_h))
                / (2.0 * fd_h);
            let an = (block.omega_dchi)(theta, chi);
            let err = (&fd - &an).amax() / (1.0 + an.amax());
            if err > tol {
                return Err(Error::GradientMismatch {
                    component: "omega chi-derivative".into(),
                    rel_err: err,
                });
            }
        }
    }
    Ok(())
}

fn check_jacobian(
    name: &str,
    f: &VecMap,
    jac: &JacMap,
    x: &DVector<f64>,
    fd_h: f64,
    tol: f64,
) -> Result<()> {
    let j = jac(x);
    let n = x.len();
    let scale = 1.0 + j.amax();
    let mut xp = x.clone();
    for c in 0..n {
        let orig = xp[c];
        xp[c] = orig + fd_h;
        let hi = f(&xp);
        xp[c] = orig - fd_h;
        let lo = f(&xp);
        xp[c] = orig;
        for r in 0..n {
            let fd = (hi[r] - lo[r]) / (2.0 * fd_h);
            let err = (fd - j[(r, c)]).abs() / scale;
            if err > tol {
                return Err(Error::GradientMismatch {
                    component: format!("{name} jacobian ({r}, {c})"),
                    rel_err: err,
                });
            }
        }
    }
    Ok(())
}

fn check_theta_derivative(
    name: &str,
    f: &MatOfTheta,
    fd_fn: &MatOfTheta,
    theta: f64,
    fd_h: f64,
    tol: f64,
) -> Result<()> {
    let fd = (f(theta + fd_h) - f(theta - fd_h)) / (2.0 * fd_h);
    let an = fd_fn(theta);
    let err = (&fd - &an).amax() / (1.0 + an.amax());
    if err > tol {
        return Err(Error::GradientMismatch {
            component: format!("{name} theta-derivative"),
            rel_err: err,
        });
    }
    Ok(())
}

// ─── tests ───────────────────────────────────────────────────────────────────
