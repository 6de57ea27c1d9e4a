use std::ffi::{CStr, CString};
use std::ptr;

use ensemble_var_ffi::*;

fn last_error() -> String {
    let p = ev_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn white_noise_panel(n: usize, t: usize, d: usize) -> *mut EvPanel {
    // xorshift + Box-Muller keeps the test free of extra deps
    let mut s: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut uni = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let data: Vec<f64> = (0..n * t * d)
        .map(|_| {
            let (u1, u2) = (uni().max(1e-300), uni());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    let mut panel = ptr::null_mut();
    let st = unsafe { ev_panel_new(data.as_ptr(), n, t, d, 1000.0, &mut panel) };
    assert_eq!(st, EvStatus::Ok);
    panel
}

#[test]
fn null_arguments_are_reported() {
    let st = unsafe { ev_series_new(ptr::null(), 10, 2, 1000.0, ptr::null_mut()) };
    assert_eq!(st, EvStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { ev_refs_len(ptr::null()) }, 0);
    unsafe {
        ev_series_free(ptr::null_mut());
        ev_panel_free(ptr::null_mut());
        ev_curve_free(ptr::null_mut());
        ev_refs_free(ptr::null_mut());
        ev_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_input_maps_to_invalid_argument() {
    let data = [1.0, f64::NAN];
    let mut out = ptr::null_mut();
    let st = unsafe { ev_series_new(data.as_ptr(), 1, 2, 1000.0, &mut out) };
    assert_eq!(st, EvStatus::InvalidArgument);
    assert!(out.is_null());

    let bad = CString::new("{not json").unwrap();
    let (mut s, mut r) = (ptr::null_mut(), ptr::null_mut());
    let st = unsafe { ev_simulate(bad.as_ptr(), &mut s, &mut r) };
    assert_eq!(st, EvStatus::InvalidArgument);
}

#[test]
fn constant_series_is_a_numerical_failure() {
    let data = vec![1.0; 2000];
    let mut series = ptr::null_mut();
    unsafe {
        assert_eq!(ev_series_new(data.as_ptr(), 2000, 1, 1000.0, &mut series), EvStatus::Ok);
        let mut refs = ptr::null_mut();
        assert_eq!(ev_detect(series, ptr::null(), &mut refs), EvStatus::Numerical);
        assert!(last_error().contains("zero-variance"));
        ev_series_free(series);
    }
}

#[test]
fn simulate_detect_extract_select() {
    let cfg = CString::new(r#"{"schedule": {"n_events": 120}, "seed": 5}"#).unwrap();
    unsafe {
        let (mut series, mut truth) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ev_simulate(cfg.as_ptr(), &mut series, &mut truth), EvStatus::Ok);
        assert_eq!(ev_refs_len(truth), 120);
        let mut points = vec![0usize; 120];
        assert_eq!(ev_refs_copy(truth, points.as_mut_ptr(), points.len()), EvStatus::Ok);
        assert!(points.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ev_refs_copy(truth, points.as_mut_ptr(), 3), EvStatus::InvalidArgument);

        let det = CString::new(r#"{"channel": 1}"#).unwrap();
        let mut detected = ptr::null_mut();
        assert_eq!(ev_detect(series, det.as_ptr(), &mut detected), EvStatus::Ok);
        assert!(ev_refs_len(detected) > 100);

        let mut panel = ptr::null_mut();
        assert_eq!(ev_panel_extract(series, truth, -100, 100, &mut panel), EvStatus::Ok);
        let (mut n, mut t, mut d) = (0, 0, 0);
        assert_eq!(ev_panel_shape(panel, &mut n, &mut t, &mut d), EvStatus::Ok);
        assert_eq!((n, t, d), (120, 200, 2));

        let mut curve = ptr::null_mut();
        assert_eq!(ev_select_order(panel, EvCriterion::EnsembleBic, 1, 6, 0.0, &mut curve), EvStatus::Ok);
        assert_eq!(ev_curve_len(curve), 6);
        let (mut sel, mut approx, mut full) = (0, 0, 0);
        assert_eq!(ev_curve_selected(curve, &mut sel, &mut approx, &mut full), EvStatus::Ok);
        assert_eq!(sel, approx);
        let mut row = EvOrderScore::default();
        assert_eq!(ev_curve_score(curve, 0, &mut row), EvStatus::Ok);
        assert_eq!(row.p, 1);
        assert_eq!(ev_curve_score(curve, 6, &mut row), EvStatus::InvalidArgument);

        let mut json = ptr::null_mut();
        assert_eq!(ev_curve_to_json(curve, &mut json), EvStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        ev_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["selected_p"].as_u64().unwrap() as usize, sel);

        ev_curve_free(curve);
        ev_panel_free(panel);
        ev_refs_free(detected);
        ev_refs_free(truth);
        ev_series_free(series);
    }
}

#[test]
fn panel_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("p.json").to_str().unwrap()).unwrap();
    let panel = white_noise_panel(30, 8, 2);
    unsafe {
        assert_eq!(ev_panel_write(panel, path.as_ptr()), EvStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ev_panel_read(path.as_ptr(), &mut back), EvStatus::Ok);
        let (mut n, mut t, mut d) = (0, 0, 0);
        ev_panel_shape(back, &mut n, &mut t, &mut d);
        assert_eq!((n, t, d), (30, 8, 2));
        ev_panel_free(back);

        let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(ev_panel_read(missing.as_ptr(), &mut none), EvStatus::Io);
        ev_panel_free(panel);
    }
}

#[test]
fn white_noise_selects_order_one() {
    let panel = white_noise_panel(400, 30, 2);
    unsafe {
        let mut curve = ptr::null_mut();
        assert_eq!(ev_select_order(panel, EvCriterion::EnsembleBicFull, 1, 5, 0.0, &mut curve), EvStatus::Ok);
        let mut sel = 0;
        ev_curve_selected(curve, &mut sel, ptr::null_mut(), ptr::null_mut());
        assert_eq!(sel, 1);
        ev_curve_free(curve);
        ev_panel_free(panel);
    }
}

#[test]
fn order_range_larger_than_panel_is_rejected() {
    let panel = white_noise_panel(10, 8, 2);
    unsafe {
        let mut curve = ptr::null_mut();
        assert_eq!(
            ev_select_order(panel, EvCriterion::EnsembleBic, 1, 6, 0.0, &mut curve),
            EvStatus::InvalidArgument
        );
        ev_panel_free(panel);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ev_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ensemble_var.h")).unwrap();
    for f in [
        "ev_last_error",
        "ev_series_new",
        "ev_simulate",
        "ev_detect",
        "ev_panel_extract",
        "ev_select_order",
        "ev_curve_score",
        "ev_run_experiment",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}
