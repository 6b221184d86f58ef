//! Minimum-norm safety filter in closed form.
//!
//! The filter solves, pointwise in time, the quadratic program "stay as close
//! as possible to the desired control subject to the barrier constraint":
//! minimize `||u - u_des||^2` subject to `phi + phi0 (u - u_des) >= 0`, where
//! for a degree-one functional `phi = LfH + LgH u_des + alpha(H)` and
//! `phi0 = LgH`, and for a degree-two extension `phi = Lf^2 H + LgLfH u_des +
//! alpha'(H) LfH + alpha_e(He)` and `phi0 = LgLfH`.
//!
//! A single affine constraint admits the explicit solution
//!
//! * `u = u_des` when `phi >= 0` (the constraint is slack), and
//! * `u = u_des - phi phi0^T / (phi0 phi0^T)` otherwise (projection onto the
//!   constraint boundary),
//!
//! which satisfies the KKT conditions of the program exactly: the multiplier
//! `-phi / (phi0 phi0^T)` is nonnegative on the active branch, stationarity
//! holds by construction, and the product of multiplier and slack vanishes on
//! both branches. When the functional is a true barrier functional the
//! hypothesis "`phi0 = 0` implies `phi > 0`" holds and the division cannot
//! occur with a vanishing denominator; the epsilon guard turns a violation of
//! that hypothesis into a reported degeneracy instead of an overflow.

use nalgebra::{DVector, RowDVector};
use std::sync::Arc;

use crate::functionals::{CbfalSpec, ClassKeFn, EvalCtx, ExtendedSpec, Functional};
use crate::integrator::ControlAffinePlant;
use crate::{Error, Result};

/// Desired-control closure.
pub type DesiredFn = Box<dyn Fn(&EvalCtx<'_>) -> Result<DVector<f64>> + Send + Sync>;

/// Default denominator guard: far below any meaningful input-path magnitude
/// in scaled problems, far above accumulated rounding in `phi0 phi0^T`.
pub const DEFAULT_EPSILON_GUARD: f64 = 1e-10;

/// Which constraint the filter enforces.
pub enum FilterMode {
    /// Degree-one constraint on `H` itself.
    Standard {
        cbfal: Arc<CbfalSpec>,
        alpha: ClassKeFn,
    },
    /// Degree-two constraint through the auxiliary functional `He`.
    Extended {
        cbfal: Arc<ExtendedSpec>,
        alpha_e: ClassKeFn,
    },
}

/// Filter configuration: constraint mode, desired control, and denominator
/// guard.
pub struct FilterSpec {
    pub mode: FilterMode,
    pub k_des: DesiredFn,
    pub epsilon_guard: f64,
}

impl FilterSpec {
    pub fn new(mode: FilterMode, k_des: DesiredFn) -> Self {
        Self {
            mode,
            k_des,
            epsilon_guard: DEFAULT_EPSILON_GUARD,
        }
    }

    /// Pure minimum-norm filter: desired control identically zero.
    pub fn min_norm(mode: FilterMode, input_dim: usize) -> Self {
        Self::new(mode, Box::new(move |_| Ok(DVector::zeros(input_dim))))
    }

    pub fn with_epsilon_guard(mut self, guard: f64) -> Self {
        self.epsilon_guard = guard;
        self
    }

    /// Handle to the functional the filter constrains.
    pub fn functional(&self) -> Functional {
        match &self.mode {
            FilterMode::Standard { cbfal, .. } => Functional::Standard(cbfal.clone()),
            FilterMode::Extended { cbfal, .. } => Functional::Extended(cbfal.clone()),
        }
    }
}

/// The constraint data at one instant, before branch selection.
#[derive(Debug, Clone)]
pub struct Constraint {
    /// Constraint value at the desired control.
    pub phi: f64,
    /// Input-path row: the constraint's sensitivity to the control.
    pub phi0: RowDVector<f64>,
    /// Barrier value `H`.
    pub h: f64,
    /// Auxiliary value `He` (extended mode only).
    pub he: Option<f64>,
    /// Desired control the constraint was linearized at.
    pub u_des: DVector<f64>,
}

/// Filter output at one instant.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// Applied control.
    pub u: DVector<f64>,
    /// Constraint value at the desired control.
    pub phi: f64,
    /// Input-path row.
    pub phi0: RowDVector<f64>,
    /// `true` when the constraint bound and the control was modified.
    pub active: bool,
    /// `true` when the denominator guard was consulted on the slack branch
    /// (`|phi0| <= guard` with `phi >= 0`): the barrier-functional
    /// hypothesis held where it was needed.
    pub guarded: bool,
}

/// Evaluates the constraint terms of `spec` at the context.
pub fn constraint(
    spec: &FilterSpec,
    plant: &ControlAffinePlant,
    ctx: &EvalCtx<'_>,
) -> Result<Constraint> {
    let u_des = (spec.k_des)(ctx)?;
    if u_des.len() != plant.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.input_dim(),
            got: u_des.len(),
        });
    }
    match &spec.mode {
        FilterMode::Standard { cbfal, alpha } => {
            let h = cbfal.eval_value(ctx)?;
            let split = cbfal.eval_split_derivative(plant, ctx)?;
            let phi = split.lf + (&split.lg * &u_des)[(0, 0)] + alpha.eval(h);
            Ok(Constraint {
                phi,
                phi0: split.lg,
                h,
                he: None,
                u_des,
            })
        }
        FilterMode::Extended { cbfal, alpha_e } => {
            let h = cbfal.h(ctx)?;
            let lf_h = cbfal.lf_h(plant, ctx)?;
            let he = lf_h + cbfal.alpha().eval(h);
            let second = cbfal.second_split(plant, ctx)?;
            let phi = second.lf
                + (&second.lg * &u_des)[(0, 0)]
                + cbfal.alpha().derivative(h) * lf_h
                + alpha_e.eval(he);
            Ok(Constraint {
                phi,
                phi0: second.lg,
                h,
                he: Some(he),
                u_des,
            })
        }
    }
}

/// Applies the closed-form branch selection to an evaluated constraint.
pub fn apply(c: &Constraint, epsilon_guard: f64) -> Result<FilterResult> {
    let norm = c.phi0.norm();
    if c.phi >= 0.0 {
        return Ok(FilterResult {
            u: c.u_des.clone(),
            phi: c.phi,
            phi0: c.phi0.clone(),
            active: false,
            guarded: norm <= epsilon_guard,
        });
    }
    if norm <= epsilon_guard {
        return Err(Error::DegenerateConstraint {
            phi: c.phi,
            phi0_norm: norm,
            guard: epsilon_guard,
        });
    }
    let u = &c.u_des - (c.phi / (norm * norm)) * c.phi0.transpose();
    Ok(FilterResult {
        u,
        phi: c.phi,
        phi0: c.phi0.clone(),
        active: true,
        guarded: false,
    })
}

/// Full filter evaluation: constraint terms plus branch selection.
pub fn filter(
    spec: &FilterSpec,
    plant: &ControlAffinePlant,
    ctx: &EvalCtx<'_>,
) -> Result<FilterResult> {
    let c = constraint(spec, plant, ctx)?;
    apply(&c, spec.epsilon_guard)
}

/// The switching surface value `phi` at the context: negative where the
/// filter modifies the control, zero on the switching surface itself.
pub fn switching_surface(
    spec: &FilterSpec,
    plant: &ControlAffinePlant,
    ctx: &EvalCtx<'_>,
) -> Result<f64> {
    Ok(constraint(spec, plant, ctx)?.phi)
}

/// Independent reference solution of the filter program, for cross-checking
/// the closed form.
///
/// Solves the same program as [`apply`] by a different route: the constraint
/// is rewritten as the half-space `a u >= b` with `a = phi0` and `b = phi0
/// u_des - phi`, and `u_des` is projected onto it with the generic
/// point-to-half-space formula. For a single input the projection is replaced
/// by iteratively refined grid search over the feasible set, which shares no
/// algebra with the closed form at all.
pub fn brute_force_oracle(
    phi: f64,
    phi0: &RowDVector<f64>,
    u_des: &DVector<f64>,
    epsilon_guard: f64,
) -> Result<DVector<f64>> {
    if phi >= 0.0 {
        return Ok(u_des.clone());
    }
    let norm = phi0.norm();
    if norm <= epsilon_guard {
        return Err(Error::DegenerateConstraint {
            phi,
            phi0_norm: norm,
            guard: epsilon_guard,
        });
    }
    if u_des.len() == 1 {
        let a = phi0[0];
        // Feasibility in one dimension: a u >= a u_des - phi.
        let b = a * u_des[0] - phi;
        let feasible = |u: f64| a * u >= b;
        let mut center = u_des[0];
        let mut radius = (phi / a).abs() * 1.5 + 1.0;
        let mut best = f64::NAN;
        for _ in 0..4 {
            let mut best_dist = f64::INFINITY;
            for i in 0..=2000 {
                let u = center - radius + i as f64 * (radius / 1000.0);
                if feasible(u) {
                    let dist = (u - u_des[0]).abs();
                    if dist < best_dist {
                        best_dist = dist;
                        best = u;
                    }
                }
            }
            center = best;
            radius /= 400.0;
        }
        return Ok(DVector::from_element(1, best));
    }
    // Half-space projection: y + a^T (b - a y) / (a a^T) when a y < b.
    let a = phi0;
    let b = (a * u_des)[(0, 0)] - phi;
    let aa = (a * a.transpose())[(0, 0)];
    let ay = (a * u_des)[(0, 0)];
    if ay >= b {
        return Ok(u_des.clone());
    }
    Ok(u_des + a.transpose() * ((b - ay) / aa))
}

/// KKT residuals of a candidate solution `u` for the filter program; all four
/// vanish (to rounding) at the true solution.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// Distance of `u - u_des` from the span of `phi0^T` with the implied
    /// multiplier.
    pub stationarity: f64,
    /// Constraint violation `max(0, -(phi + phi0 (u - u_des)))`.
    pub primal: f64,
    /// Multiplier negativity `max(0, -mu)`.
    pub dual: f64,
    /// Complementary slackness `|mu (phi + phi0 (u - u_des))|`.
    pub complementary: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementary)
    }
}

/// Evaluates the KKT residuals of `u` for the program defined by `(phi,
/// phi0, u_des)`.
pub fn kkt_residuals(
    phi: f64,
    phi0: &RowDVector<f64>,
    u_des: &DVector<f64>,
    u: &DVector<f64>,
) -> KktResiduals {
    let delta = u - u_des;
    let denom = phi0.norm_squared();
    let mu = if denom > 0.0 {
        (phi0 * &delta)[(0, 0)] / denom
    } else {
        0.0
    };
    let stationarity = (&delta - mu * phi0.transpose()).norm();
    let slack = phi + (phi0 * &delta)[(0, 0)];
    KktResiduals {
        stationarity,
        primal: (-slack).max(0.0),
        dual: (-mu).max(0.0),
        complementary: (mu * slack).abs(),
    }
}

// ─── tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_constraint_passes_the_desired_control_through() {
        let c = Constraint {
            phi: 0.3,
            phi0: RowDVector::from_vec(vec![1.0, -2.0]),
            h: 1.0,
            he: None,
            u_des: DVector::from_vec(vec![0.5, -0.25]),
        };
        let r = apply(&c, DEFAULT_EPSILON_GUARD).unwrap();
        assert!(!r.active);
        assert_eq!(r.u, c.u_des);
    }

    #[test]
    fn active_branch_lands_exactly_on_the_constraint_boundary() {
        let c = Constraint {
            phi: -0.7,
            phi0: RowDVector::from_vec(vec![0.8, -0.6]),
            h: -0.1,
            he: None,
            u_des: DVector::from_vec(vec![0.1, 0.2]),
        };
        let r = apply(&c, DEFAULT_EPSILON_GUARD).unwrap();
        assert!(r.active);
        let slack = c.phi + (&c.phi0 * (&r.u - &c.u_des))[(0, 0)];
        assert!(slack.abs() < 1e-14, "slack {slack}");
        let res = kkt_residuals(c.phi, &c.phi0, &c.u_des, &r.u);
        assert!(res.max() < 1e-14, "{res:?}");
    }

    #[test]
    fn degenerate_constraint_is_an_error_not_an_overflow() {
        let c = Constraint {
            phi: -1.0,
            phi0: RowDVector::from_vec(vec![0.0, 0.0]),
            h: -0.5,
            he: None,
            u_des: DVector::zeros(2),
        };
        assert!(matches!(
            apply(&c, DEFAULT_EPSILON_GUARD),
            Err(Error::DegenerateConstraint { .. })
        ));
        // Slack side: the guard is consulted, no error.
        let ok = Constraint { phi: 0.5, ..c };
        let r = apply(&ok, DEFAULT_EPSILON_GUARD).unwrap();
        assert!(r.guarded);
        assert!(!r.active);
    }

    #[test]
    fn oracle_agrees_with_the_closed_form_on_a_hand_case() {
        let phi = -1.2;
        let phi0 = RowDVector::from_vec(vec![2.0]);
        let u_des = DVector::from_vec(vec![0.3]);
        let closed = apply(
            &Constraint {
                phi,
                phi0: phi0.clone(),
                h: 0.0,
                he: None,
                u_des: u_des.clone(),
            },
            DEFAULT_EPSILON_GUARD,
        )
        .unwrap();
        let oracle = brute_force_oracle(phi, &phi0, &u_des, DEFAULT_EPSILON_GUARD).unwrap();
        assert!((closed.u[0] - oracle[0]).abs() < 1e-9);
        // u = u_des - phi * phi0 / |phi0|^2 = 0.3 + 1.2 * 2 / 4 = 0.9.
        assert!((closed.u[0] - 0.9).abs() < 1e-14);
    }
}
