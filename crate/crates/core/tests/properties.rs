//! Property tests over the numeric invariants that hold for arbitrary
//! inputs (not just the worked examples): norm axioms, duality-map
//! postconditions, power-iteration agreement with the SVD oracle, schedule
//! shape, and log-line round-tripping.

use normlab::harness::LogLine;
use normlab::linalg::{rms_vector_norm, spectral_norm, svd_oracle, Matrix2D, Rng};
use normlab::lmo::{dual_one_to_rms, dual_rms_to_inf, dual_rms_to_rms_exact, DUAL_EPS};
use normlab::norms::{op_norm_one_to_rms, op_norm_rms_to_inf, op_norm_rms_to_rms_with};
use normlab::scion::{lr_at, ScheduleSpec};
use proptest::prelude::*;

fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix2D {
    Matrix2D::gaussian(rows, cols, &mut Rng::new(seed))
}

proptest! {
    /// RMS norm equals the plain two-pass summation oracle.
    #[test]
    fn rms_norm_matches_two_pass_oracle(
        v in proptest::collection::vec(-100.0f64..100.0, 1..64)
    ) {
        let got = rms_vector_norm(&v).unwrap();
        let mut ss = 0.0;
        for x in &v {
            ss += x * x;
        }
        let want = (ss / v.len() as f64).sqrt();
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    /// Power iteration agrees with the Jacobi SVD's top singular value to
    /// 1e-8 relative on random rectangles up to 32x32.
    #[test]
    fn spectral_norm_matches_svd_oracle(
        rows in 1usize..=32,
        cols in 1usize..=32,
        seed in 0u64..10_000
    ) {
        let w = seeded_matrix(rows, cols, seed);
        let top = svd_oracle(&w).sigma[0];
        prop_assume!(top > 1e-12);
        let pi = spectral_norm(&w, 1e-13, 500_000).unwrap();
        prop_assert!(
            (pi - top).abs() <= 1e-8 * top,
            "power iteration {pi} vs oracle {top} ({rows}x{cols})"
        );
    }

    /// Homogeneity: norm(c W) = |c| norm(W) for all three kinds.
    #[test]
    fn norms_are_homogeneous(
        rows in 1usize..=12,
        cols in 1usize..=12,
        seed in 0u64..10_000,
        c in -8.0f64..8.0
    ) {
        prop_assume!(c.abs() > 1e-6);
        let w = seeded_matrix(rows, cols, seed);
        let scaled = w.scaled(c);

        let a = op_norm_one_to_rms(&w);
        prop_assert!((op_norm_one_to_rms(&scaled) - c.abs() * a).abs() <= 1e-12 * (c.abs() * a));
        let a = op_norm_rms_to_inf(&w);
        prop_assert!((op_norm_rms_to_inf(&scaled) - c.abs() * a).abs() <= 1e-12 * (c.abs() * a));
        let a = op_norm_rms_to_rms_with(&w, 1e-14, 500_000).unwrap();
        let b = op_norm_rms_to_rms_with(&scaled, 1e-14, 500_000).unwrap();
        prop_assert!((b - c.abs() * a).abs() <= 1e-12 * (c.abs() * a));
    }

    /// Triangle inequality for the two closed-form norms.
    #[test]
    fn norms_satisfy_triangle_inequality(
        rows in 1usize..=12,
        cols in 1usize..=12,
        seed in 0u64..10_000
    ) {
        let a = seeded_matrix(rows, cols, seed);
        let b = seeded_matrix(rows, cols, seed.wrapping_add(1));
        let mut sum = a.clone();
        sum.add_scaled(&b, 1.0);
        prop_assert!(
            op_norm_one_to_rms(&sum) <= op_norm_one_to_rms(&a) + op_norm_one_to_rms(&b) + 1e-10
        );
        prop_assert!(
            op_norm_rms_to_inf(&sum) <= op_norm_rms_to_inf(&a) + op_norm_rms_to_inf(&b) + 1e-10
        );
    }

    /// Unit-norm postcondition of the exact duality maps, and positive
    /// homogeneity of degree zero (scale invariance of the direction).
    #[test]
    fn exact_duals_have_unit_norm_and_ignore_scale(
        rows in 2usize..=12,
        cols in 2usize..=12,
        seed in 0u64..10_000,
        c in 0.01f64..50.0
    ) {
        let g = seeded_matrix(rows, cols, seed);

        let d = dual_one_to_rms(&g, DUAL_EPS);
        prop_assert!((op_norm_one_to_rms(&d) - 1.0).abs() <= 1e-9);
        prop_assert!(d.max_abs_diff(&dual_one_to_rms(&g.scaled(c), DUAL_EPS)) <= 1e-9);

        let d = dual_rms_to_inf(&g, DUAL_EPS);
        prop_assert!((op_norm_rms_to_inf(&d) - 1.0).abs() <= 1e-9);
        prop_assert!(d.max_abs_diff(&dual_rms_to_inf(&g.scaled(c), DUAL_EPS)) <= 1e-9);

        let d = dual_rms_to_rms_exact(&g).unwrap();
        let n = op_norm_rms_to_rms_with(&d, 1e-13, 500_000).unwrap();
        prop_assert!((n - 1.0).abs() <= 1e-9);
        // Spectral condition: every singular value is sqrt(d_out/d_in).
        let want = (rows as f64 / cols as f64).sqrt();
        for s in &svd_oracle(&d).sigma {
            if *s > 1e-9 {
                prop_assert!((s - want).abs() <= 1e-9);
            }
        }
    }

    /// The LR schedule is within [0, base], continuous at the decay knee,
    /// and non-increasing along the tail.
    #[test]
    fn schedule_shape(
        horizon in 1_000u64..1_000_000,
        frac in 0.05f64..0.95,
        base in 0.001f64..4.0
    ) {
        let s = ScheduleSpec::LinearDecayTail {
            total_horizon: horizon,
            decay_fraction: frac,
        };
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let t = horizon * i / 20;
            let lr = lr_at(&s, t, base).unwrap();
            prop_assert!((0.0..=base + 1e-12).contains(&lr));
            prop_assert!(lr <= prev + 1e-12 * base);
            prev = lr;
        }
        prop_assert!(lr_at(&s, horizon, base).unwrap().abs() < 1e-12);
    }

    /// Log lines survive serialize/parse exactly.
    #[test]
    fn log_line_round_trips(
        step in 0u64..1_000_000,
        tokens in 0u64..u64::MAX / 2,
        loss in 0.0f64..100.0,
        lr in 0.0f64..4.0,
        wall in 0u64..1_000_000,
        norm in 0.0f64..1e6
    ) {
        let mut norms = std::collections::BTreeMap::new();
        norms.insert("output_projection".to_string(), norm);
        let line = LogLine {
            run_id: format!("run{step}"),
            step,
            tokens,
            raw_loss: loss,
            norms,
            lr_effective: lr,
            wall_ms: wall,
        };
        let back: LogLine = serde_json::from_str(&serde_json::to_string(&line).unwrap()).unwrap();
        prop_assert_eq!(back, line);
    }
}
