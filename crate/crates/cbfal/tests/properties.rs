//! Property suites for the structural invariants: interpolation exactness,
//! filter optimality, quadrature identities, the general functional builder,
//! and override serialization.

use nalgebra::{DVector, RowDVector};
use proptest::prelude::*;

use cbfal::config::{OverrideValue, Overrides};
use cbfal::functionals::{
    build_from_general, CbfalSpec, DistributedWeight, EvalCtx, GeneralFunctionalSpec,
};
use cbfal::history::{HistoryWindow, InterpMode};
use cbfal::safety_filter::{apply, brute_force_oracle, kkt_residuals, Constraint};
use cbfal::verify::{hdot_along_window, smooth_window};

const GUARD: f64 = 1e-10;

fn dvec(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Uniform window over `[0, span]` sampling `p` and its derivative.
fn poly_window(
    interp: InterpMode,
    span: f64,
    cells: usize,
    p: impl Fn(f64) -> f64,
    dp: impl Fn(f64) -> f64,
) -> HistoryWindow {
    let mut w = HistoryWindow::new(1, span, interp).expect("window");
    w.set_retain_all(true);
    for i in 0..=cells {
        let t = span * i as f64 / cells as f64;
        w.append(t, dvec(p(t)), dvec(dp(t))).expect("append");
    }
    w
}

fn constraint(phi: f64, phi0: &[f64], u_des: &[f64]) -> Constraint {
    Constraint {
        phi,
        phi0: RowDVector::from_row_slice(phi0),
        h: 0.0,
        he: None,
        u_des: DVector::from_column_slice(u_des),
    }
}

// ─── interpolation exactness ───

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Cubic Hermite reproduces every cubic exactly on uniform grids.
    #[test]
    fn cubic_hermite_reproduces_cubics(
        c in prop::array::uniform4(-2.0..2.0f64),
        span in 0.5..3.0f64,
        frac in 0.0..1.0f64,
        cells in 3usize..40,
    ) {
        let p = move |t: f64| c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
        let dp = move |t: f64| c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t;
        let w = poly_window(InterpMode::CubicHermite, span, cells, p, dp);
        let q = frac * span;
        let got = EvalCtx::at(&w, span).state_at(q - span).unwrap()[0];
        let scale = 1.0 + p(q).abs() + c.iter().map(|v| v.abs()).sum::<f64>() * (1.0 + span.powi(3));
        prop_assert!((got - p(q)).abs() <= 1e-12 * scale,
            "p({q}) = {}, interpolated {got}", p(q));
    }

    /// Linear interpolation reproduces every affine function exactly.
    #[test]
    fn linear_interp_reproduces_affine(
        c in prop::array::uniform2(-3.0..3.0f64),
        span in 0.5..3.0f64,
        frac in 0.0..1.0f64,
        cells in 2usize..40,
    ) {
        let p = move |t: f64| c[0] + c[1] * t;
        let w = poly_window(InterpMode::Linear, span, cells, p, move |_| c[1]);
        let q = frac * span;
        let got = EvalCtx::at(&w, span).state_at(q - span).unwrap()[0];
        prop_assert!((got - p(q)).abs() <= 1e-12 * (1.0 + p(q).abs()));
    }

    /// The derivative channel is piecewise linear in the stored derivatives,
    /// so it reproduces quadratic states (linear derivatives) exactly.
    #[test]
    fn derivative_channel_reproduces_quadratics(
        c in prop::array::uniform3(-2.0..2.0f64),
        span in 0.5..2.0f64,
        frac in 0.0..1.0f64,
        cells in 3usize..40,
    ) {
        let p = move |t: f64| c[0] + c[1] * t + c[2] * t * t;
        let dp = move |t: f64| c[1] + 2.0 * c[2] * t;
        let w = poly_window(InterpMode::CubicHermite, span, cells, p, dp);
        let q = frac * span;
        let got = EvalCtx::at(&w, span).derivative_at(q - span).unwrap()[0];
        prop_assert!((got - dp(q)).abs() <= 1e-12 * (1.0 + dp(q).abs()));
    }

    /// Queries at committed node times return the stored samples bit for bit.
    #[test]
    fn node_queries_return_stored_samples(
        c in prop::array::uniform4(-2.0..2.0f64),
        span in 0.5..3.0f64,
        cells in 3usize..30,
        pick in 0usize..30,
    ) {
        let p = move |t: f64| c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
        let dp = move |t: f64| c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t;
        let w = poly_window(InterpMode::CubicHermite, span, cells, p, dp);
        let node = span * (pick % (cells + 1)) as f64 / cells as f64;
        let ctx = EvalCtx::at(&w, span);
        prop_assert_eq!(ctx.state_at(node - span).unwrap()[0], p(node));
        prop_assert_eq!(ctx.derivative_at(node - span).unwrap()[0], dp(node));
    }
}

// ─── filter optimality ───

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The closed-form branch matches the independent projection oracle and
    /// satisfies the KKT system of the underlying program.
    #[test]
    fn filter_matches_the_projection_oracle(
        m in 1usize..=3,
        phi in -3.0..3.0f64,
        raw in prop::collection::vec(-2.0..2.0f64, 6),
    ) {
        let phi0: Vec<f64> = raw[..m].to_vec();
        let u_des: Vec<f64> = raw[3..3 + m].to_vec();
        let norm: f64 = phi0.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm >= 0.1);

        let c = constraint(phi, &phi0, &u_des);
        let result = apply(&c, GUARD).unwrap();
        let oracle = brute_force_oracle(phi, &c.phi0, &c.u_des, GUARD).unwrap();
        let dev = (&result.u - &oracle).amax();
        prop_assert!(dev <= 1e-9, "closed form vs oracle deviate by {dev}");

        let residual = kkt_residuals(phi, &c.phi0, &c.u_des, &result.u).max();
        prop_assert!(residual <= 1e-12, "KKT residual {residual}");

        // Branch consistency: slack constraints leave the control untouched.
        prop_assert_eq!(result.active, phi < 0.0);
        if phi >= 0.0 {
            prop_assert_eq!(&result.u, &c.u_des);
        }
    }

    /// No feasible perturbation of the filter output is closer to the
    /// desired control (minimality of the projection).
    #[test]
    fn filter_is_minimal_among_feasible_points(
        m in 1usize..=3,
        phi in -3.0..0.0f64,
        raw in prop::collection::vec(-2.0..2.0f64, 6),
        delta in prop::collection::vec(-1.5..1.5f64, 3),
    ) {
        let phi0: Vec<f64> = raw[..m].to_vec();
        let u_des: Vec<f64> = raw[3..3 + m].to_vec();
        let norm: f64 = phi0.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm >= 0.1);

        let c = constraint(phi, &phi0, &u_des);
        let result = apply(&c, GUARD).unwrap();
        let candidate = &result.u + DVector::from_column_slice(&delta[..m]);
        let slack = phi + (&c.phi0 * (&candidate - &c.u_des))[(0, 0)];
        prop_assume!(slack >= 0.0);
        let best = (&result.u - &c.u_des).norm();
        let dist = (&candidate - &c.u_des).norm();
        prop_assert!(dist + 1e-9 >= best,
            "feasible candidate at {dist} beats filter at {best}");
    }
}

// ─── quadrature and the general builder ───

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Composite trapezoid is exact for integrands affine in `theta` along
    /// affine states, independent of node placement.
    #[test]
    fn trapezoid_is_exact_on_affine_integrands(
        c in prop::array::uniform2(-2.0..2.0f64),
        k in prop::array::uniform3(-2.0..2.0f64),
        span in 1.0..3.0f64,
        s1f in 0.4..0.9f64,
        s2f in 0.0..0.3f64,
    ) {
        let p = move |t: f64| c[0] + c[1] * t;
        let w = poly_window(InterpMode::Linear, span, 24, p, move |_| c[1]);
        let ctx = EvalCtx::at(&w, span);
        let (s1, s2) = (s1f * span, s2f * span);
        let got = ctx
            .integrate_state(s1, s2, |theta, x| k[0] + k[1] * theta + k[2] * x[0])
            .unwrap();
        // Integrand g(theta) = k0 + k1 theta + k2 p(span + theta) is affine;
        // antiderivative evaluated at the endpoints gives the exact value.
        let g = |theta: f64| {
            k[0] * theta + 0.5 * k[1] * theta * theta
                + k[2] * (c[0] * theta + c[1] * (span * theta + 0.5 * theta * theta))
        };
        let exact = g(-s2) - g(-s1);
        prop_assert!((got - exact).abs() <= 1e-12 * (1.0 + exact.abs()),
            "trapezoid {got} vs exact {exact}");
    }

    /// The rewritten drift of a distributed block agrees with raw quadrature
    /// of the kernel drift for random exponential kernels on random smooth
    /// histories.
    #[test]
    fn ibp_agrees_with_raw_quadrature(
        a in -1.5..1.5f64,
        amp in 0.2..2.0f64,
        s1f in 0.5..1.5f64,
        s2f in 0.0..0.3f64,
        seed in any::<u64>(),
    ) {
        let w = smooth_window(1, 2.0, 400, seed).unwrap();
        let dist = DistributedWeight::new(
            s1f,
            s2f,
            Box::new(move |ctx: &EvalCtx<'_>, theta: f64| {
                let x = ctx.state_at(theta)?;
                Ok(RowDVector::from_element(1, amp * (a * theta).exp() * x[0]))
            }),
        )
        .with_kernel_dtheta(Box::new(move |ctx: &EvalCtx<'_>, theta: f64| {
            let x = ctx.state_at(theta)?;
            let xd = ctx.derivative_at(theta)?;
            Ok(RowDVector::from_element(
                1,
                amp * (a * theta).exp() * (a * x[0] + xd[0]),
            ))
        }));
        let ctx = EvalCtx::at(&w, -0.2);
        let ibp = dist.eval_drift_term_ibp(&ctx).unwrap();
        let raw = dist.eval_drift_term_raw(&ctx).unwrap();
        // Both routes use the same composite rule, so they differ only
        // through the O(h^2) quadrature error of each form.
        prop_assert!((ibp - raw).abs() <= 2e-3 * (1.0 + raw.abs()),
            "rewritten drift {ibp} vs raw {raw}");
    }

    /// The general-family builder reproduces a handwritten functional with
    /// the same outer function, both in value and in assembled drift.
    #[test]
    fn general_builder_matches_the_handwritten_functional(
        seed in any::<u64>(),
        tfrac in 0.1..0.9f64,
    ) {
        let handwritten = CbfalSpec::builder("prop-direct")
            .value(Box::new(|ctx: &EvalCtx<'_>| {
                let x = ctx.state_at(0.0)?;
                Ok(1.0 - x[0] * x[0])
            }))
            .w0(Box::new(|ctx: &EvalCtx<'_>| {
                let x = ctx.state_at(0.0)?;
                Ok(RowDVector::from_element(1, -2.0 * x[0]))
            }))
            .build()
            .unwrap();
        let general = build_from_general(GeneralFunctionalSpec {
            name: "prop-general".into(),
            dim: 1,
            point_lags: vec![],
            outer: Box::new(|args: &[DVector<f64>]| 1.0 - args[0][0] * args[0][0]),
            outer_grads: vec![Box::new(|args: &[DVector<f64>]| {
                RowDVector::from_element(1, -2.0 * args[0][0])
            })],
            single_block: None,
            double_block: None,
        })
        .unwrap();

        let w = smooth_window(1, 1.0, 150, seed).unwrap();
        let ctx = EvalCtx::at(&w, -1.0 + tfrac);
        let (hv, gv) = (
            handwritten.eval_value(&ctx).unwrap(),
            general.eval_value(&ctx).unwrap(),
        );
        prop_assert!((hv - gv).abs() <= 1e-12 * (1.0 + hv.abs()));
        let (hd, gd) = (
            hdot_along_window(&handwritten, &ctx).unwrap(),
            hdot_along_window(&general, &ctx).unwrap(),
        );
        prop_assert!((hd - gd).abs() <= 1e-12 * (1.0 + hd.abs()));
    }
}

// ─── override serialization ───

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// TOML round trip preserves every override exactly (values are finite
    /// and keys flat, the shape the CLI accepts).
    #[test]
    fn override_round_trip_preserves_values(
        entries in prop::collection::btree_map(
            "[a-z][a-z0-9_]{0,8}",
            prop_oneof![
                (-1e6..1e6f64).prop_map(OverrideValue::Number),
                any::<bool>().prop_map(OverrideValue::Bool),
            ],
            0..8,
        ),
    ) {
        let mut overrides = Overrides::new();
        for (k, v) in &entries {
            match v {
                OverrideValue::Number(x) => overrides.set_number(k, *x),
                OverrideValue::Bool(b) => overrides.set_bool(k, *b),
            };
        }
        let text = overrides.to_toml_string();
        let back = Overrides::from_toml_str(&text).unwrap();
        prop_assert_eq!(back.into_map(), overrides.into_map());
    }
}
