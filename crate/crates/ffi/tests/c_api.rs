use std::ffi::CStr;
use std::ptr;

use gausson_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        gausson_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn constant_model() -> *mut GaussonModel {
    let mut m = ptr::null_mut();
    let p = [1.0];
    assert_eq!(unsafe { gausson_model_new(GaussonFamily::Constant, p.as_ptr(), 1, 2, &mut m) }, GaussonStatus::Ok);
    m
}

#[test]
fn model_round_trip() {
    let m = constant_model();
    let mut v = 0.0;
    let x = [0.3, -0.2];
    assert_eq!(unsafe { gausson_model_value(m, x.as_ptr(), &mut v) }, GaussonStatus::Ok);
    assert_eq!(v, 1.0);
    unsafe { gausson_model_free(m) };
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut m = ptr::null_mut();
    let p = [1.0, 2.0];
    let s = unsafe { gausson_model_new(GaussonFamily::Constant, p.as_ptr(), 2, 2, &mut m) };
    assert_eq!(s, GaussonStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
    let s = unsafe { gausson_model_new(GaussonFamily::Constant, p.as_ptr(), 1, 2, ptr::null_mut()) };
    assert_eq!(s, GaussonStatus::NullPointer);
    assert!(last_error().contains("null"));
    let mut v = 0.0;
    assert_eq!(unsafe { gausson_model_value(ptr::null(), p.as_ptr(), &mut v) }, GaussonStatus::NullPointer);
    unsafe {
        gausson_model_free(ptr::null_mut());
        gausson_solution_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_reports_length() {
    let mut m = ptr::null_mut();
    unsafe { gausson_model_new(GaussonFamily::Constant, ptr::null(), 3, 2, &mut m) };
    let full = unsafe { gausson_last_error(ptr::null_mut(), 0) };
    let mut small = [1 as std::ffi::c_char; 4];
    let n = unsafe { gausson_last_error(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, full);
    assert_eq!(small[3], 0);
}

#[test]
fn construct_on_constant_potential() {
    let m = constant_model();
    let mut s = ptr::null_mut();
    let c = [0.0, 0.0];
    assert_eq!(unsafe { gausson_construct(m, 0.3, c.as_ptr(), 1, 0.5, &mut s) }, GaussonStatus::Ok, "{}", last_error());
    let (mut dim, mut n, mut l) = (0usize, 0usize, 0.0);
    assert_eq!(unsafe { gausson_solution_grid(s, &mut dim, &mut n, &mut l) }, GaussonStatus::Ok);
    assert_eq!(dim, 2);
    let mut buf = vec![0.0; n * n];
    assert_eq!(unsafe { gausson_solution_values(s, buf.as_mut_ptr(), 3) }, GaussonStatus::BufferTooSmall);
    assert_eq!(unsafe { gausson_solution_values(s, buf.as_mut_ptr(), buf.len()) }, GaussonStatus::Ok);
    let top = buf.iter().cloned().fold(0.0, f64::max);
    assert!((top - 1.5f64.exp()).abs() < 1e-12);
    let mut y = [9.0; 2];
    assert_eq!(unsafe { gausson_solution_centres(s, y.as_mut_ptr(), 2) }, GaussonStatus::Ok);
    assert_eq!(y, [0.0, 0.0]);
    let mut sum = GaussonSummary::default();
    assert_eq!(unsafe { gausson_solution_summary(s, &mut sum) }, GaussonStatus::Ok);
    assert!(sum.certified);
    assert_eq!(sum.k, 1);
    assert_eq!(sum.phi_eps_norm, 0.0);
    let dir = std::env::temp_dir().join(format!("gausson-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = std::ffi::CString::new(dir.join("u.gfld").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gausson_solution_write(s, path.as_ptr()) }, GaussonStatus::Ok);
    let back = gausson::io::read_field(&dir.join("u.gfld")).unwrap();
    assert_eq!(back.values, buf);
    std::fs::remove_dir_all(&dir).unwrap();
    unsafe {
        gausson_solution_free(s);
        gausson_model_free(m);
    }
}

#[test]
fn overlapping_centres_are_rejected() {
    let m = constant_model();
    let mut s = ptr::null_mut();
    let c = [0.0, 0.0, 0.1, 0.0];
    assert_eq!(unsafe { gausson_construct(m, 0.2, c.as_ptr(), 2, 0.5, &mut s) }, GaussonStatus::InvalidArgument);
    assert!(s.is_null());
    unsafe { gausson_model_free(m) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(gausson_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gausson.h")).unwrap();
    for sym in [
        "gausson_model_new",
        "gausson_model_free",
        "gausson_construct",
        "gausson_solution_values",
        "gausson_last_error",
        "typedef struct GaussonSolution GaussonSolution",
        "GAUSSON_STATUS_OK = 0",
    ] {
        assert!(h.contains(sym), "{sym}");
    }
}

#[test]
fn compiles_and_runs_from_c() {
    let Ok(cc) = which_cc() else { return };
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = root.join("../../target").join(if cfg!(debug_assertions) { "debug" } else { "release" });
    if !lib_dir.join("libgausson_ffi.a").exists() {
        return;
    }
    let dir = std::env::temp_dir().join(format!("gausson-c-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "gausson.h"
int main(void) {
    GaussonModel *m = NULL;
    double p[1] = {1.0};
    if (gausson_model_new(GAUSSON_FAMILY_CONSTANT, p, 1, 1, &m) != GAUSSON_STATUS_OK) return 1;
    double c[1] = {0.0};
    GaussonSolution *s = NULL;
    if (gausson_construct(m, 0.3, c, 1, 0.5, &s) != GAUSSON_STATUS_OK) return 2;
    GaussonSummary sum;
    if (gausson_solution_summary(s, &sum) != GAUSSON_STATUS_OK || !sum.certified) return 3;
    if (gausson_construct(NULL, 0.3, c, 1, 0.5, &s) != GAUSSON_STATUS_NULL_POINTER) return 4;
    gausson_solution_free(s);
    gausson_model_free(m);
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("smoke");
    let status = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(lib_dir.join("libgausson_ffi.a"))
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{:?}", out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
    std::fs::remove_dir_all(&dir).unwrap();
}

fn which_cc() -> Result<&'static str, ()> {
    for c in ["cc", "gcc", "clang"] {
        if std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(c);
        }
    }
    Err(())
}
