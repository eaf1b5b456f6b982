use std::ffi::{CStr, CString};
use std::ptr;

use lqc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lqc_last_error()) }.to_string_lossy().into_owned()
}

/// Scalar system `x' = 0.9 x + u + w`, `W = 1`.
fn scalar_system() -> *mut LqcSystem {
    let mut sys = ptr::null_mut();
    let status = unsafe { lqc_system_new(1, 1, &0.9, &1.0, &1.0, &mut sys) };
    assert_eq!(status, LqcStatus::Ok, "{}", last_error());
    sys
}

fn scalar_riccati_gain(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let mut p = q;
    for _ in 0..10_000 {
        p = q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
    }
    -a * b * p / (r + b * b * p)
}

#[test]
fn system_reports_dims_and_rejects_bad_input() {
    let a = [0.5, 0.1, 0.0, 0.4];
    let b = [1.0, 0.0];
    let w = [1.0, 0.0, 0.0, 1.0];
    let mut sys = ptr::null_mut();
    unsafe {
        assert_eq!(lqc_system_new(2, 1, a.as_ptr(), b.as_ptr(), w.as_ptr(), &mut sys), LqcStatus::Ok);
        let (mut d, mut k) = (0, 0);
        assert_eq!(lqc_system_dims(sys, &mut d, &mut k), LqcStatus::Ok);
        assert_eq!((d, k), (2, 1));
        lqc_system_free(sys);

        let asym = [1.0, 0.5, 0.0, 1.0];
        let mut bad = ptr::null_mut();
        assert_eq!(
            lqc_system_new(2, 1, a.as_ptr(), b.as_ptr(), asym.as_ptr(), &mut bad),
            LqcStatus::InvalidArgument
        );
        assert!(bad.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(lqc_system_new(2, 1, ptr::null(), b.as_ptr(), w.as_ptr(), &mut bad), LqcStatus::NullPointer);
        assert!(last_error().contains('A'));
        lqc_system_free(ptr::null_mut());
    }
}

#[test]
fn oracle_matches_riccati_and_budget_errors_are_reported() {
    let sys = scalar_system();
    unsafe {
        let mut prob = ptr::null_mut();
        assert_eq!(lqc_problem_new(sys, 1e6, &mut prob), LqcStatus::Ok);
        let mut k = 0.0;
        assert_eq!(lqc_oracle(prob, &1.0, &1.0, 1e-9, &mut k), LqcStatus::Ok);
        assert!((k - scalar_riccati_gain(0.9, 1.0, 1.0, 1.0)).abs() < 1e-6);
        lqc_problem_free(prob);

        let mut tight = ptr::null_mut();
        assert_eq!(lqc_problem_new(sys, 1.2, &mut tight), LqcStatus::Infeasible);
        assert!(tight.is_null());
        assert!(last_error().contains("trace"));
        lqc_system_free(sys);
    }
}

#[test]
fn projection_lands_in_the_feasible_set() {
    let sys = scalar_system();
    unsafe {
        let mut prob = ptr::null_mut();
        assert_eq!(lqc_problem_new(sys, 4.0, &mut prob), LqcStatus::Ok);
        let mut sigma = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(lqc_problem_project(prob, sigma.as_ptr(), sigma.as_mut_ptr()), LqcStatus::Ok);
        let [xx, xu, ux, uu] = sigma;
        assert_eq!(xu, ux);
        assert!((xx - (0.81 * xx + 1.8 * xu + uu + 1.0)).abs() < 1e-6);
        assert!(xx + uu <= 4.0 + 1e-8);
        assert!(xx >= 0.0 && uu >= 0.0 && xx * uu - xu * xu >= -1e-8);

        let asym = [1.0, 0.5, 0.0, 1.0];
        assert_eq!(lqc_problem_project(prob, asym.as_ptr(), sigma.as_mut_ptr()), LqcStatus::InvalidArgument);
        lqc_problem_free(prob);
        lqc_system_free(sys);
    }
}

#[test]
fn ogd_handle_steps_and_reports_state() {
    let sys = scalar_system();
    unsafe {
        let mut prob = ptr::null_mut();
        assert_eq!(lqc_problem_new(sys, 4.0, &mut prob), LqcStatus::Ok);
        let mut ogd = ptr::null_mut();
        let eta = 0.05;
        assert_eq!(lqc_ogd_new(prob, eta, 3, &mut ogd), LqcStatus::Ok);
        let mut u = 0.0;
        assert_eq!(lqc_ogd_act(ogd, &1.0, &mut u), LqcStatus::Ok);
        assert!(u.is_finite());
        for _ in 0..10 {
            let mut step = f64::NAN;
            assert_eq!(lqc_ogd_update(ogd, &1.0, &0.5, &mut step), LqcStatus::Ok);
            assert!(step <= 4.0 * 1.0 * eta + 1e-6);
        }
        let mut k = f64::NAN;
        assert_eq!(lqc_ogd_gain(ogd, &mut k), LqcStatus::Ok);
        let mut sigma = [0.0; 4];
        assert_eq!(lqc_ogd_sigma(ogd, sigma.as_mut_ptr()), LqcStatus::Ok);
        assert!((k - sigma[1] / sigma[0]).abs() < 1e-9);
        assert_eq!(lqc_ogd_update(ogd, ptr::null(), &0.5, ptr::null_mut()), LqcStatus::NullPointer);
        lqc_ogd_free(ogd);
        lqc_problem_free(prob);
        lqc_system_free(sys);
    }
}

#[test]
fn fll_handle_runs_a_short_episode() {
    let sys = scalar_system();
    unsafe {
        let mut prob = ptr::null_mut();
        assert_eq!(lqc_problem_new(sys, 4.0, &mut prob), LqcStatus::Ok);
        let mut fll = ptr::null_mut();
        assert_eq!(lqc_fll_new(prob, 0.5, 7, &mut fll), LqcStatus::Ok);
        let mut switches = 0;
        let mut x = 1.0;
        for t in 0..200 {
            let (mut u, mut resetting) = (0.0, false);
            assert_eq!(lqc_fll_act(fll, &x, &mut u, &mut resetting), LqcStatus::Ok);
            x = 0.9 * x + u + if t % 2 == 0 { 0.3 } else { -0.3 };
            let r = if t % 3 == 0 { 0.1 } else { 1.0 };
            let mut switched = false;
            assert_eq!(lqc_fll_update(fll, &1.0, &r, &mut switched), LqcStatus::Ok);
            switches += switched as usize;
        }
        let mut count = 0;
        assert_eq!(lqc_fll_switch_count(fll, &mut count), LqcStatus::Ok);
        assert_eq!(count, switches);
        let mut k = f64::NAN;
        assert_eq!(lqc_fll_gain(fll, &mut k), LqcStatus::Ok);
        assert!((0.9 + k).abs() < 1.0);
        lqc_fll_free(fll);
        lqc_problem_free(prob);
        lqc_system_free(sys);
    }
}

#[test]
fn experiment_runs_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = CString::new(r#"{"controller": {"kind": "fll"}, "horizon": 50, "seed": 2}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut regret = f64::NAN;
    let status = unsafe { lqc_run_experiment(config.as_ptr(), out.as_ptr(), &mut regret) };
    assert_eq!(status, LqcStatus::Ok, "{}", last_error());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["regret"].as_f64().unwrap(), regret);
    assert!(dir.path().join("trace.csv").exists());

    let bad = CString::new(r#"{"horizon": 5}"#).unwrap();
    assert_eq!(
        unsafe { lqc_run_experiment(bad.as_ptr(), out.as_ptr(), ptr::null_mut()) },
        LqcStatus::InvalidArgument
    );
}
