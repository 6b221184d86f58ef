//! Frozen analytic oracles for the benchmark scenarios.
//!
//! Every constant here is derived by hand from the closed forms quoted in the
//! comments and written down as a literal, so the expected values cannot
//! drift if the implementation changes. The scalar benchmark plant is
//!
//! ```text
//! x'(t) = x(t)^3 + x(t - tau) u(t),    x(theta) = 0.4 for theta <= 0,
//! ```
//!
//! whose open loop (`u = 0`) separates: `dx / x^3 = dt` gives
//!
//! ```text
//! x(t) = x0 / sqrt(1 - 2 x0^2 t) = 0.4 / sqrt(1 - 0.32 t).
//! ```

/// Constant initial level of the scalar benchmark.
pub const X0: f64 = 0.4;

/// Open-loop state at `t = 2`: `0.4 / sqrt(1 - 0.64) = 0.4 / 0.6 = 2/3`.
pub const X_AT_2: f64 = 2.0 / 3.0;

/// Tolerance on the simulated `x(2)` against [`X_AT_2`].
pub const X_AT_2_TOL: f64 = 1e-5;

/// Finite-time escape of the open loop: the denominator `1 - 0.32 t`
/// vanishes at `t = 1 / 0.32 = 3.125`.
pub const ESCAPE_TIME: f64 = 3.125;

/// The escape must be reported strictly inside this window; the lower edge
/// sits below 3.125 because the state leaves representable range only a few
/// steps after the analytic blow-up time.
pub const ESCAPE_WINDOW: (f64, f64) = (3.0, 3.2);

/// First open-loop exit from the safe set of `H = 1 - x^2`: `x(t) = 1` when
/// `0.16 / (1 - 0.32 t) = 1`, i.e. `t = 0.84 / 0.32 = 2.625`.
pub const FIRST_UNSAFE_TIME: f64 = 2.625;

/// Tolerance on the recorded first `H < 0` time against [`FIRST_UNSAFE_TIME`].
pub const FIRST_UNSAFE_TOL: f64 = 1e-2;

/// Initial barrier level `H(x_0) = 1 - 0.4^2 = 0.84` (the same value for the
/// instantaneous, hybrid, and averaged barriers, since the history is
/// constant).
pub const H0: f64 = 0.84;

/// Filter activation time for the instantaneous barrier with `gamma = 1`:
/// along the open loop, `phi = -2 x^4 + gamma (1 - x^2)` vanishes when
/// `y = x^2` solves `2 y^2 + y - 1 = 0`, whose positive root is `y = 1/2`;
/// then `0.16 / (1 - 0.32 t) = 1/2` gives `t = 0.68 / 0.32 = 2.125`.
pub const SWITCH_TIME: f64 = 2.125;

/// Tolerance on the located switch time against [`SWITCH_TIME`].
pub const SWITCH_TIME_TOL: f64 = 5e-3;

/// Extended barrier level at `t = 0` for the averaged barrier with
/// `gamma = 3`: the averaged `H` starts at 0.84 with zero drift (constant
/// history), so `He(0) = Hdot + gamma H = 3 * 0.84 = 2.52`.
pub const CASE3_HE0_GAMMA3: f64 = 2.52;

/// Predator-prey coexistence equilibrium for the Lotka-Volterra system
///
/// ```text
/// x1' = r x1 - a x1^2 - p x1 x2
/// x2' = b p x1(t - tau) x2(t - tau) - d x2 - m x2^2
/// ```
///
/// with `r = 1, a = 1, p = 4, b = 1.2, m = 0.1, d = 1`. Setting both rates
/// to zero at a constant state and eliminating `x2` gives
///
/// ```text
/// x1* = (m r + p d) / (a m + b p^2) = (0.1 + 4)   / (0.1 + 19.2) = 4.1 / 19.3,
/// x2* = (b p r - a d) / (a m + b p^2) = (4.8 - 1) / (0.1 + 19.2) = 3.8 / 19.3.
/// ```
pub fn predator_prey_equilibrium() -> (f64, f64) {
    (4.1 / 19.3, 3.8 / 19.3)
}

/// Prey band of the predator-prey safety functional.
pub const PREY_BAND: (f64, f64) = (0.05, 0.6);

/// Closed-form open-loop solution of the scalar benchmark, valid for
/// `t < 3.125`.
pub fn scalar_open_loop(t: f64) -> f64 {
    X0 / (1.0 - 2.0 * X0 * X0 * t).sqrt()
}
