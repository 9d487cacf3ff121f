use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use mflq_ffi::*;

const SP2: &str = r#"{"n":1,"m":1,"A":[-1],"B":[1],"Q":[1],"R":[1],"b":[1],"sigma":[0.5]}"#;

fn problem(json: &str) -> (MflqStatus, *mut MflqProblem) {
    let c = CString::new(json).unwrap();
    let mut p = ptr::null_mut();
    let status = unsafe { mflq_problem_from_json(c.as_ptr(), &mut p) };
    (status, p)
}

fn last_error() -> String {
    let e = mflq_last_error();
    assert!(!e.is_null());
    unsafe { CStr::from_ptr(e) }.to_str().unwrap().to_string()
}

#[test]
fn are_and_static_through_handles() {
    let (s, p) = problem(SP2);
    assert_eq!(s, MflqStatus::Ok);
    unsafe {
        let (mut n, mut m) = (0usize, 0usize);
        assert_eq!(mflq_problem_dims(p, &mut n, &mut m), MflqStatus::Ok);
        assert_eq!((n, m), (1, 1));
        assert_eq!(mflq_problem_check_assumptions(p), MflqStatus::Ok);

        let mut are = ptr::null_mut();
        assert_eq!(mflq_are_solve(p, &mut are), MflqStatus::Ok);
        let mut buf = [0.0f64; 1];
        assert_eq!(mflq_are_copy_P(are, buf.as_mut_ptr(), 1), MflqStatus::Ok);
        assert!((buf[0] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert_eq!(mflq_are_copy_Pi(are, buf.as_mut_ptr(), 1), MflqStatus::Ok);
        assert!((buf[0] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert_eq!(mflq_are_copy_Theta(are, buf.as_mut_ptr(), 1), MflqStatus::Ok);
        assert!((buf[0] + (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let (mut rp, mut rpi) = (1.0, 1.0);
        assert_eq!(mflq_are_residuals(are, &mut rp, &mut rpi), MflqStatus::Ok);
        assert!(rp <= 1e-10 && rpi <= 1e-10);

        let mut st = ptr::null_mut();
        assert_eq!(mflq_static_solve(p, are, &mut st), MflqStatus::Ok);
        let mut v = 0.0;
        assert_eq!(mflq_static_value(st, &mut v), MflqStatus::Ok);
        assert!((v - (0.5 + 0.25 * (2f64.sqrt() - 1.0))).abs() < 1e-10);
        mflq_static_copy_x(st, buf.as_mut_ptr(), 1);
        assert!((buf[0] - 0.5).abs() < 1e-10);
        mflq_static_copy_u(st, buf.as_mut_ptr(), 1);
        assert!((buf[0] + 0.5).abs() < 1e-10);
        mflq_static_copy_lambda(st, buf.as_mut_ptr(), 1);
        assert!((buf[0] - 0.5).abs() < 1e-10);

        mflq_static_free(st);
        mflq_are_free(are);
        mflq_problem_free(p);
    }
}

#[test]
fn status_codes_follow_exit_codes() {
    assert_eq!(problem("{\"n\":1,").0, MflqStatus::Parse);
    assert_eq!(problem(r#"{"n":2,"m":1,"A":[1,2,3]}"#).0, MflqStatus::Shape);
    assert!(last_error().contains("$.A"));

    let (s, p) = problem(r#"{"n":1,"m":1,"A":[-1],"Q":[1]}"#);
    assert_eq!(s, MflqStatus::Ok);
    unsafe {
        assert_eq!(mflq_problem_check_assumptions(p), MflqStatus::Assumption);
        assert!(last_error().contains("R ≻ 0"));
        mflq_problem_free(p);
    }

    let (_, p) = problem(r#"{"n":1,"m":1,"A":[1],"Q":[1],"R":[1]}"#);
    unsafe {
        let mut are = ptr::null_mut();
        assert_eq!(mflq_are_solve(p, &mut are), MflqStatus::Acceptance);
        assert!(are.is_null());
        assert!(last_error().contains("ARE divergence"));
        mflq_problem_free(p);
    }
}

#[test]
fn bad_arguments_are_reported() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(mflq_problem_from_json(ptr::null(), &mut p), MflqStatus::NullArgument);
        assert_eq!(mflq_are_solve(ptr::null(), ptr::null_mut()), MflqStatus::NullArgument);
        mflq_problem_free(ptr::null_mut());
        mflq_string_free(ptr::null_mut());

        let (_, p) = problem(r#"{"n":2,"m":1,"A":[-1,0,0,-1],"B":[1,0],"Q":[1,0,0,1],"R":[1]}"#);
        let mut are = ptr::null_mut();
        assert_eq!(mflq_are_solve(p, &mut are), MflqStatus::Ok);
        let mut small = [0.0f64; 3];
        assert_eq!(mflq_are_copy_P(are, small.as_mut_ptr(), 3), MflqStatus::BufferTooSmall);
        mflq_are_free(are);
        mflq_problem_free(p);
    }
}

#[test]
fn turnpike_report_json() {
    let (_, p) = problem(SP2);
    let x0 = [1.5];
    let mut out = ptr::null_mut();
    let status = unsafe { mflq_turnpike_report_json(p, x0.as_ptr(), 1, 2.0, 0.01, 64, 7, &mut out) };
    assert_eq!(
        status,
        MflqStatus::Ok,
        "{}",
        if status == MflqStatus::Ok {
            String::new()
        } else {
            last_error()
        }
    );
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["n_paths"], 64);
    assert!(doc["invariants"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
    unsafe {
        mflq_string_free(out);
        let mut out = ptr::null_mut();
        assert_eq!(
            mflq_turnpike_report_json(p, x0.as_ptr(), 1, 2.0, 0.3, 64, 7, &mut out),
            MflqStatus::Shape
        );
        assert!(out.is_null());
        mflq_problem_free(p);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(mflq_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/mflq.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "mflq_problem_from_json",
        "mflq_are_solve",
        "mflq_static_solve",
        "mflq_turnpike_report_json",
        "MFLQ_STATUS_ACCEPTANCE = 5",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).output() else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
