use std::ffi::{CStr, CString};
use std::ptr;

use concave_clf_ffi::*;

fn last_error() -> String {
    let p = cclf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cclf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn linear_comparison_rates() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(cclf_comparison_linear(3.0, &mut f), CclfStatus::Ok);
        let mut y = 0.0;
        assert_eq!(cclf_comparison_value(f, 2.0, &mut y), CclfStatus::Ok);
        assert_eq!(y, 6.0);

        let (eps, c) = (1e-3, 10.0);
        let mut t = 0.0;
        assert_eq!(cclf_crossing_time(f, eps, c, &mut t), CclfStatus::Ok);
        assert!(close(t, (c / eps).ln() / 3.0, 1e-10));
        let mut s = 0.0;
        assert_eq!(cclf_nominal_rate(f, eps, c, &mut s), CclfStatus::Ok);
        assert!(close(s, 3.0, 1e-10));
        let mut r = 0.0;
        assert_eq!(cclf_relaxation_ratio(f, eps, c, &mut r), CclfStatus::Ok);
        assert!(close(r, 1.0, 1e-10));
        cclf_comparison_free(f);
    }
}

#[test]
fn rational_closed_form_matches_quadrature() {
    unsafe {
        let (k_min, k_max, r, c, eps, sigma) = (0.1, 2.3, 0.8, 10.0, 1e-3, 3.0);
        let mut ell = 0.0;
        assert_eq!(cclf_normalize_ell(k_min, k_max, r, c, &mut ell), CclfStatus::Ok);
        assert!(close(ell, (r - k_min) * c / (k_max - r), 1e-14));

        let mut f = ptr::null_mut();
        assert_eq!(cclf_comparison_rational(sigma, k_min, k_max, ell, &mut f), CclfStatus::Ok);
        let mut quad = 0.0;
        assert_eq!(cclf_nominal_rate(f, eps, c, &mut quad), CclfStatus::Ok);
        let mut closed = 0.0;
        assert_eq!(cclf_closed_form_rate(k_min, k_max, ell, sigma, eps, c, &mut closed), CclfStatus::Ok);
        assert!(close(quad, closed, 1e-9), "{quad} vs {closed}");
        cclf_comparison_free(f);
    }
}

#[test]
fn comparison_from_json_both_forms() {
    unsafe {
        let explicit = CString::new(r#"{"kind":"sqrt","parameters":{"coefficient":2}}"#).unwrap();
        let mut f = ptr::null_mut();
        assert_eq!(cclf_comparison_from_json(explicit.as_ptr(), 1.0, &mut f), CclfStatus::Ok);
        let mut y = 0.0;
        cclf_comparison_value(f, 4.0, &mut y);
        assert!(close(y, 4.0, 1e-14));
        cclf_comparison_free(f);

        let normalized =
            CString::new(r#"{"normalized_rational":{"sigma":3,"k_min":0.1,"k_max":2.3,"r":0.7}}"#).unwrap();
        assert_eq!(cclf_comparison_from_json(normalized.as_ptr(), 5.0, &mut f), CclfStatus::Ok);
        cclf_comparison_value(f, 5.0, &mut y);
        assert!(close(y, 0.7 * 3.0 * 5.0, 1e-12));
        cclf_comparison_free(f);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(cclf_comparison_linear(-1.0, &mut f), CclfStatus::InvalidArgument);
        assert!(f.is_null());
        assert!(last_error().contains("sigma"));

        assert_eq!(cclf_comparison_linear(1.0, ptr::null_mut()), CclfStatus::NullPointer);
        let mut ell = 0.0;
        assert_eq!(cclf_normalize_ell(0.5, 2.0, 0.2, 1.0, &mut ell), CclfStatus::InvalidArgument);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(cclf_comparison_from_json(bad.as_ptr(), 1.0, &mut f), CclfStatus::Config);
        let unknown = CString::new("submarine").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(cclf_plant_preset(unknown.as_ptr(), &mut p), CclfStatus::Config);
        assert!(last_error().contains("submarine"));

        let invalid_utf8 = [0xffu8, 0];
        assert_eq!(cclf_plant_preset(invalid_utf8.as_ptr().cast(), &mut p), CclfStatus::InvalidUtf8);

        // NULL handles are accepted by the release functions.
        cclf_comparison_free(ptr::null_mut());
        cclf_plant_free(ptr::null_mut());
        cclf_trajectory_free(ptr::null_mut());
        cclf_string_free(ptr::null_mut());
    }
}

#[test]
fn pendulum_plant_queries() {
    unsafe {
        let name = CString::new("pendulum").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(cclf_plant_preset(name.as_ptr(), &mut p), CclfStatus::Ok);
        let (mut n, mut m) = (0usize, 0usize);
        assert_eq!(cclf_plant_dims(p, &mut n, &mut m), CclfStatus::Ok);
        assert_eq!((n, m), (2, 1));

        let mut short = [0.0; 1];
        assert_eq!(cclf_plant_initial_state(p, short.as_mut_ptr(), 1), CclfStatus::BufferTooSmall);
        let mut x0 = [0.0; 2];
        assert_eq!(cclf_plant_initial_state(p, x0.as_mut_ptr(), 2), CclfStatus::Ok);

        let mut v = 0.0;
        assert_eq!(cclf_plant_clf(p, x0.as_ptr(), 2, &mut v), CclfStatus::Ok);
        assert!(v > 0.0);
        assert_eq!(cclf_plant_clf(p, x0.as_ptr(), 1, &mut v), CclfStatus::Precondition);

        let (mut lf, mut lg) = (0.0, [0.0; 1]);
        assert_eq!(cclf_plant_lie_derivatives(p, x0.as_ptr(), 2, &mut lf, lg.as_mut_ptr(), 1), CclfStatus::Ok);
        assert!(lf.is_finite() && lg[0].is_finite());
        cclf_plant_free(p);
    }
}

#[test]
fn simulate_integrator_bang_bang() {
    unsafe {
        let json = CString::new(r#"{"preset":"integrator","theta":1.0,"x0":2.0}"#).unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(cclf_plant_from_json(json.as_ptr(), &mut p), CclfStatus::Ok);
        let ctl = CString::new(r#"{"type":"bang_bang","theta":1.0}"#).unwrap();
        let sim = CString::new(r#"{"dt":0.001,"horizon":1.0}"#).unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(cclf_simulate(p, ctl.as_ptr(), sim.as_ptr(), &mut t), CclfStatus::Ok, "{}", last_error());

        let mut len = 0usize;
        cclf_trajectory_len(t, &mut len);
        assert_eq!(len, 1001);
        let mut times = vec![0.0; len];
        let mut values = vec![0.0; len];
        assert_eq!(cclf_trajectory_times(t, times.as_mut_ptr(), len), CclfStatus::Ok);
        assert_eq!(cclf_trajectory_values(t, values.as_mut_ptr(), len), CclfStatus::Ok);
        assert_eq!(times[0], 0.0);
        assert!(close(times[len - 1], 1.0, 1e-9));
        // |x| shrinks at unit speed from 2, so V = x² is 1 at t = 1.
        assert!(close(values[0], 4.0, 1e-12));
        assert!(close(values[len - 1], 1.0, 1e-6), "{}", values[len - 1]);

        let mut csv = ptr::null_mut();
        assert_eq!(cclf_trajectory_csv(t, &mut csv), CclfStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        cclf_string_free(csv);
        assert_eq!(text.lines().count(), len + 1);

        let xi = [0.5];
        let mut js = ptr::null_mut();
        assert_eq!(cclf_trajectory_metrics_json(t, xi.as_ptr(), 1, &mut js), CclfStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(CStr::from_ptr(js).to_str().unwrap()).unwrap();
        cclf_string_free(js);
        // V = 2 when |x| = √2, reached at t = 2 − √2.
        let crossing = report["windows"][0]["crossing_time"].as_f64().unwrap();
        assert!((crossing - (2.0 - 2f64.sqrt())).abs() < 2e-3, "{crossing}");

        cclf_trajectory_free(t);
        cclf_plant_free(p);
    }
}

#[test]
fn simulate_pendulum_normalized_soft_qp() {
    unsafe {
        let name = CString::new("pendulum").unwrap();
        let mut p = ptr::null_mut();
        cclf_plant_preset(name.as_ptr(), &mut p);
        let ctl = CString::new(
            r#"{"type":"soft_qp","theta":10,"slack_weight":1e5,
                "comparison":{"normalized_rational":{"sigma":3,"k_min":0.1,"k_max":2.3,"r":0.8}}}"#,
        )
        .unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(cclf_simulate(p, ctl.as_ptr(), ptr::null(), &mut t), CclfStatus::Ok, "{}", last_error());
        let mut len = 0usize;
        cclf_trajectory_len(t, &mut len);
        assert_eq!(len, 5001);
        let mut values = vec![0.0; len];
        cclf_trajectory_values(t, values.as_mut_ptr(), len);
        assert!(values[len - 1] < 1e-4 * values[0]);

        let bad = CString::new(r#"{"type":"soft_qp","theta":10}"#).unwrap();
        let mut t2 = ptr::null_mut();
        assert_eq!(cclf_simulate(p, bad.as_ptr(), ptr::null(), &mut t2), CclfStatus::Config);
        assert!(t2.is_null());

        cclf_trajectory_free(t);
        cclf_plant_free(p);
    }
}

#[test]
fn header_declares_entry_points() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/concave_clf.h")).unwrap();
    for sym in ["cclf_simulate", "cclf_comparison_rational", "cclf_last_error_message", "CCLF_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}
