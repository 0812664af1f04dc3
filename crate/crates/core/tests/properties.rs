use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use concave_clf::comparison::{rational_factor, ComparisonFn, RationalFactorParams};
use concave_clf::plant::{PlantModel, SingleIntegrator};
use concave_clf::qp::{solve_small_qp, QpProblem};
use concave_clf::sim::{simulate, ControllerSpec, CostSpec, SimConfig};
use concave_clf::tuning::normalize_ell;
use concave_clf::windowed::{crossing_time, nominal_rate, Window};

fn window() -> impl Strategy<Value = Window> {
    (-2.0f64..2.0, -6.0f64..-0.5).prop_map(|(lc, lx)| Window::relative(10f64.powf(lx), 10f64.powf(lc)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_crossing_is_log_ratio(sigma in 0.01f64..20.0, w in window()) {
        let t = crossing_time(&ComparisonFn::linear(sigma).unwrap(), &w).unwrap();
        prop_assert!((t * sigma / w.log_span() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scaling_scales_rate(k in 0.1f64..10.0, p in 0.2f64..0.95, w in window()) {
        let f = ComparisonFn::power(1.0, p).unwrap();
        let a = nominal_rate(&f, &w).unwrap();
        let b = nominal_rate(&f.scaled(k).unwrap(), &w).unwrap();
        prop_assert!((b / (k * a) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rational_factor_is_bounded_and_decreasing(
        k_min in 0.0f64..0.99, spread in 0.01f64..5.0, ell in 1e-3f64..10.0, v in 1e-6f64..100.0,
    ) {
        let k_max = k_min + spread;
        let params = RationalFactorParams::new(k_min, k_max, ell).unwrap();
        let s = rational_factor(&params, v).unwrap();
        let s_next = rational_factor(&params, v * 1.01).unwrap();
        prop_assert!(k_min <= s && s <= k_max);
        prop_assert!(s_next < s);
    }

    #[test]
    fn normalization_hits_endpoint(k_min in 0.0f64..0.9, r_off in 0.01f64..0.09, k_max in 1.01f64..4.0, c in 0.01f64..100.0) {
        let r = k_min + r_off;
        let ell = normalize_ell(k_min, k_max, r, c).unwrap();
        let s = rational_factor(&RationalFactorParams::new(k_min, k_max, ell).unwrap(), c).unwrap();
        prop_assert!((s - r).abs() < 1e-12);
    }

    #[test]
    fn soft_qp_respects_box(a in -5.0f64..5.0, b in -20.0f64..20.0, theta in 0.0f64..4.0, q in 1.0f64..1e5) {
        let p = QpProblem {
            cost: DMatrix::identity(1, 1),
            decay_row: DVector::from_element(1, a),
            decay_offset: b,
            theta,
            slack_weight: Some(q),
            rate: None,
        };
        let sol = solve_small_qp(&p).unwrap();
        prop_assert!(sol.u[0].abs() <= theta + 1e-12);
        prop_assert!(sol.delta >= -1e-12);
        prop_assert!(a * sol.u[0] + b <= sol.delta + 1e-9 * (1.0 + b.abs()));
    }
}

#[test]
fn simulation_is_deterministic() {
    let plant = SingleIntegrator::new(1.0).unwrap();
    let spec = ControllerSpec::HardQp { comparison: ComparisonFn::sqrt(2.0).unwrap(), theta: 1.0, cost: CostSpec::Identity };
    let cfg = SimConfig { horizon: 2.0, ..SimConfig::default() };
    let x0 = plant.initial_state();
    let runs: Vec<_> = (0..2)
        .map(|_| simulate(&plant, spec.build(&plant).unwrap().as_mut(), &cfg, &x0).unwrap())
        .collect();
    assert_eq!(runs[0], runs[1]);
    // The cap α = 2θ√V is met exactly by u = −θ·sign(x).
    let v_end = *runs[0].values.last().unwrap();
    assert_relative_eq!(v_end, (10.0f64 - 2.0).powi(2), max_relative = 1e-9);
}
