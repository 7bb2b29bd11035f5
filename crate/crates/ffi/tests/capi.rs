use std::ffi::{CStr, CString};
use std::ptr;

use mjctrl_ffi::*;

fn fixture(name: &str) -> *mut MjctrlModel {
    let name = CString::new(name).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mjctrl_model_from_fixture(name.as_ptr(), &mut h) }, MjctrlStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = mjctrl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn phage_metric_through_c_abi() {
    let h = fixture("phage-lambda");
    let (mut m, mut d, mut p, mut n) = (0, 0, 0, 0);
    assert_eq!(unsafe { mjctrl_model_dims(h, &mut m, &mut d, &mut p, &mut n) }, MjctrlStatus::Ok);
    assert_eq!((m, d, p, n), (2, 1, 4, 2));

    let mut p0 = [0.0; 4];
    let (mut rank, mut lmin, mut nc) = (0usize, 0.0, 0i32);
    let st = unsafe { mjctrl_metric(h, p0.as_mut_ptr(), 4, &mut rank, &mut lmin, &mut nc) };
    assert_eq!(st, MjctrlStatus::Ok);
    for (got, want) in p0.iter().zip([592.0, -192.0, -192.0, 64.0]) {
        assert!((got - want).abs() <= 0.01 * want.abs());
    }
    assert_eq!(rank, 2);
    assert_eq!(nc, 1);
    assert!((lmin - 1.5647078).abs() < 1e-3);

    let y0 = [1.0, 0.0];
    let mut v = 0.0;
    assert_eq!(unsafe { mjctrl_ctrl_norm_sq(h, y0.as_ptr(), 2, &mut v) }, MjctrlStatus::Ok);
    assert!((v - p0[0]).abs() < 1e-6 * p0[0]);
    unsafe { mjctrl_model_free(h) };
}

#[test]
fn oracle_and_json() {
    let h = fixture("null-not-approx");
    let (mut nc, mut ac, mut res) = (false, true, 1.0);
    assert_eq!(unsafe { mjctrl_oracle(h, &mut nc, &mut ac, &mut res) }, MjctrlStatus::Ok);
    assert!(nc && !ac);
    assert!(res < 1e-8);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { mjctrl_analyze_json(h, &mut s) }, MjctrlStatus::Ok);
    let json = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { mjctrl_string_free(s) };
    let parsed = mjctrl::report::AnalysisReport::from_json(&json).unwrap();
    assert_eq!(parsed.model.name, "null-not-approx");
    unsafe { mjctrl_model_free(h) };
}

#[test]
fn gramian_through_c_abi() {
    let h = fixture("ncc0-not-sufficient");
    let mut g = [0.0; 9];
    let mut rank = 0;
    assert_eq!(unsafe { mjctrl_gramian(h, 4, g.as_mut_ptr(), 9, &mut rank) }, MjctrlStatus::Ok);
    assert_eq!(g, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
    assert_eq!(rank, 3);
    assert_eq!(unsafe { mjctrl_gramian(h, 3, g.as_mut_ptr(), 9, &mut rank) }, MjctrlStatus::Ok);
    assert_eq!(rank, 2);
    assert_eq!(unsafe { mjctrl_gramian(h, 4, g.as_mut_ptr(), 8, &mut rank) }, MjctrlStatus::BufferTooSmall);
    unsafe { mjctrl_model_free(h) };
}

#[test]
fn error_codes() {
    let mut h = ptr::null_mut();
    let bad = CString::new("horizon = 2\nb = [[1]\n").unwrap();
    assert_eq!(unsafe { mjctrl_model_from_str(bad.as_ptr(), &mut h) }, MjctrlStatus::Parse);
    assert!(h.is_null());
    assert!(last_error().contains("line"));

    let non_square = CString::new(
        "horizon = 1\nb = [[1], [0]]\n[trend]\nmode = \"iid\"\nq = [1]\n[a]\nvalue = [[1, 0, 0], [0, 1, 0]]\n",
    )
    .unwrap();
    assert_eq!(unsafe { mjctrl_model_from_str(non_square.as_ptr(), &mut h) }, MjctrlStatus::Validation);
    assert!(last_error().contains("invalid a"));

    let name = CString::new("missing").unwrap();
    assert_eq!(unsafe { mjctrl_model_from_fixture(name.as_ptr(), &mut h) }, MjctrlStatus::Validation);
    assert_eq!(unsafe { mjctrl_model_from_str(ptr::null(), &mut h) }, MjctrlStatus::NullPointer);
    assert_eq!(unsafe { mjctrl_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, MjctrlStatus::NullPointer);
    unsafe { mjctrl_model_free(ptr::null_mut()) };
    unsafe { mjctrl_string_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mjctrl.h")).unwrap();
    for sym in [
        "typedef struct MjctrlModel MjctrlModel",
        "MJCTRL_STATUS_OK",
        "mjctrl_model_from_str",
        "mjctrl_model_from_fixture",
        "mjctrl_model_free",
        "mjctrl_model_dims",
        "mjctrl_metric",
        "mjctrl_oracle",
        "mjctrl_ctrl_norm_sq",
        "mjctrl_gramian",
        "mjctrl_analyze_json",
        "mjctrl_string_free",
        "mjctrl_last_error",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "mjctrl.h"

int main(void) {
    MjctrlModel *h = NULL;
    if (mjctrl_model_from_fixture("phage-lambda", &h) != MJCTRL_STATUS_OK) return 10;
    double p0[4];
    size_t rank = 0;
    double lmin = 0.0;
    int32_t nc = 0;
    if (mjctrl_metric(h, p0, 4, &rank, &lmin, &nc) != MJCTRL_STATUS_OK) return 11;
    mjctrl_model_free(h);
    if (rank != 2 || nc != 1 || fabs(lmin - 1.5647078) > 1e-3) return 12;
    if (mjctrl_model_from_str("horizon = 1\nb = [[1]\n", &h) != MJCTRL_STATUS_PARSE) return 13;
    printf("%s\n", mjctrl_last_error());
    return 0;
}
"#;

/// Compiles and links a C program against the generated header and the static library.
#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libmjctrl_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = std::process::Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 2"));
}
