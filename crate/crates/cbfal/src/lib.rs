//! Safety-critical control of time-delay systems via control barrier
//! functionals.
//!
//! The crate simulates retarded and neutral delay differential equations under
//! a minimum-norm safety filter and checks the resulting forward-invariance
//! guarantees numerically. The pieces compose bottom-up:
//!
//! * [`history`] stores a committed trajectory together with its derivative
//!   and answers dense-in-time queries for both channels.
//! * [`functionals`] represents barrier functionals over the history space
//!   through their weight decomposition, splits their derivative along a
//!   control-affine plant into drift and input parts, extends degree-two
//!   functionals, and classifies relative degree.
//! * [`safety_filter`] evaluates the closed-form solution of the minimum-norm
//!   quadratic program for both the standard and the extended constraint.
//! * [`integrator`] advances the closed loop with a fixed-step method-of-steps
//!   scheme and records diagnostics.
//! * [`scenarios`] wires the worked examples (four scalar barrier variants and
//!   a delayed predator-prey model) and evaluates their acceptance checks.
//! * [`verify`] cross-checks the algebraic core against independent oracles:
//!   a brute-force projection for the filter, finite differences for assembled
//!   derivatives, and quadrature identities for integration by parts.
//!
//! Everything is deterministic: fixed-step integration, seeded randomness in
//! verification, and no platform-dependent branching in numeric paths.

pub mod config;
pub mod functionals;
pub mod history;
pub mod integrator;
pub mod report;
pub mod safety_filter;
pub mod scenarios;
pub mod verify;

use thiserror::Error;

/// Reasons a functional cannot be extended to relative degree two.
#[derive(Debug, Clone, PartialEq)]
pub enum NotExtendableReason {
    /// A nonzero point-delay weight makes the drift derivative depend on the
    /// derivative history, so the second derivative would differentiate a
    /// signal the state history does not determine.
    NonzeroPointWeight { lag: f64 },
    /// The distributed term has neither a closed form nor a kernel
    /// theta-derivative, so its integration-by-parts rewrite is unavailable.
    DistributedWithoutIbp,
    /// No drift-derivative decomposition was supplied, so the second
    /// derivative cannot be split against the plant.
    MissingLfDecomposition,
}

impl std::fmt::Display for NotExtendableReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NonzeroPointWeight { lag } => {
                write!(f, "nonzero point-delay weight at lag {lag}")
            }
            Self::DistributedWithoutIbp => {
                write!(f, "distributed weight lacks an integration-by-parts form")
            }
            Self::MissingLfDecomposition => {
                write!(f, "no decomposition of the drift derivative was supplied")
            }
        }
    }
}

/// Crate-wide error type.
///
/// Errors signal contract violations (bad queries, inconsistent
/// configuration) or structural impossibilities (extension of an ineligible
/// functional). Events that terminate a simulation but still leave a usable
/// partial trajectory (finite-time escape, degenerate constraint at runtime)
/// are reported through [`integrator::Termination`] instead, so callers keep
/// the records produced up to the stopping time.
#[derive(Debug, Error)]
pub enum Error {
    /// A state or derivative query left the span covered by stored samples
    /// and the seeded initial history.
    #[error("query at t = {t} outside retained span [{lo}, {hi}]")]
    QueryOutsideSpan { t: f64, lo: f64, hi: f64 },

    /// An appended sample does not advance time.
    #[error("append at t = {t} does not advance past last sample time {last}")]
    NonMonotoneTime { t: f64, last: f64 },

    /// A vector or matrix had the wrong dimension for the plant or window.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A derivative query needs derivative history that was never committed,
    /// for example the lag-zero derivative during a right-hand-side
    /// evaluation whose own output would define that value.
    #[error("derivative history unavailable at t = {t}")]
    MissingDerivativeHistory { t: f64 },

    /// A supplied gradient disagrees with finite differences of its function.
    #[error(
        "gradient of {component} disagrees with finite differences (relative error {rel_err:.3e})"
    )]
    GradientMismatch { component: String, rel_err: f64 },

    /// The functional fails a structural precondition for degree-two
    /// extension.
    #[error("functional is not extendable: {reason}")]
    NotExtendable { reason: NotExtendableReason },

    /// The filter constraint is violated while its input direction is
    /// numerically zero; no finite control can restore it.
    #[error(
        "degenerate constraint: phi = {phi:.6e} < 0 with |phi0| = {phi0_norm:.3e} <= guard {guard:.1e}"
    )]
    DegenerateConstraint {
        phi: f64,
        phi0_norm: f64,
        guard: f64,
    },

    /// A state component left the reach of floating point during setup or a
    /// context where no partial trajectory exists to return.
    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    /// The scenario registry has no entry under this name.
    #[error("unknown scenario {name:?} (known: {known})")]
    UnknownScenario { name: String, known: String },

    /// A parameter override is unknown to the scenario or breaks one of its
    /// invariants.
    #[error("invalid override {key:?}: {reason}")]
    InvalidOverride { key: String, reason: String },

    /// A configuration value violates a precondition stated on the
    /// constructor or operation that rejected it.
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    /// A class-Ke candidate fails one of its defining properties.
    #[error("invalid class-Ke function: {reason}")]
    InvalidClassKe { reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
