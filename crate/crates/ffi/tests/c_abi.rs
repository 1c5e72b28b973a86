use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rhflow_ffi::*;

const TORUS: &str = r#"{"scenario": "pde", "seed": 5, "alpha": 1.0, "t_end": 0.2, "sample_interval": 0.05,
    "grid": {"n": 12, "metric": {"kind": "smooth", "amp": 0.1}, "map": {"kind": "smooth", "amp": 0.3}}}"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; rh_last_error_length() + 1];
    unsafe { rh_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn config(json: &str) -> *mut RhConfig {
    let text = CString::new(json).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { rh_config_from_json(text.as_ptr(), &mut cfg) }, RhStatus::Ok, "{}", last_error());
    cfg
}

fn diag(flow: *const RhFlow) -> RhDiagnostics {
    let mut d = RhDiagnostics::default();
    assert_eq!(unsafe { rh_flow_diagnostics(flow, &mut d) }, RhStatus::Ok);
    d
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(rh_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn closed_form_and_error_reporting() {
    let (mut c, mut d) = (0.0, 0.0);
    let st = unsafe { rh_homogeneous_closed_form(RhModelKind::ProductS2L, false, 0.5, 0.1, &mut c, &mut d) };
    assert_eq!(st, RhStatus::Ok);
    assert!((c - 0.9).abs() < 1e-15 && (d - 1.3).abs() < 1e-15);

    let st = unsafe { rh_homogeneous_closed_form(RhModelKind::Sphere2, false, 0.5, 2.0, &mut c, &mut d) };
    assert_eq!(st, RhStatus::InvalidArgument);
    assert!(last_error().contains("extinction"));

    let st = unsafe { rh_homogeneous_closed_form(RhModelKind::Sphere2, false, 0.5, 0.1, ptr::null_mut(), &mut d) };
    assert_eq!(st, RhStatus::NullPointer);
    assert!(last_error().contains("`c`"));

    // Truncation keeps the terminator.
    let mut small = [1 as c_char; 5];
    let n = unsafe { rh_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, 4);
    assert_eq!(small[4], 0);
}

#[test]
fn invalid_config_reports_the_key() {
    let text = CString::new(r#"{"scenario": "pde", "grid": {"n": 12}, "alpha": 1.0, "t_end": -1}"#).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { rh_config_from_json(text.as_ptr(), &mut cfg) }, RhStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("t_end"));
}

#[test]
fn staged_advance_matches_a_single_advance() {
    let cfg = config(TORUS);
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(rh_flow_new(cfg, &mut a), RhStatus::Ok);
        assert_eq!(rh_flow_new(cfg, &mut b), RhStatus::Ok);
        let mut singular = true;
        assert_eq!(rh_flow_advance(a, 0.2, &mut singular), RhStatus::Ok);
        assert!(!singular);
        assert_eq!(rh_flow_advance(b, 0.1, &mut singular), RhStatus::Ok);
        assert_eq!(rh_flow_advance(b, 0.2, &mut singular), RhStatus::Ok);
        let mut t = 0.0;
        assert_eq!(rh_flow_time(b, &mut t), RhStatus::Ok);
        assert!((t - 0.2).abs() < 1e-14);
        assert_eq!(diag(a), diag(b));
        assert_eq!(rh_flow_advance(b, 0.1, &mut singular), RhStatus::InvalidArgument);
        rh_flow_free(a);
        rh_flow_free(b);
        rh_config_free(cfg);
    }
}

#[test]
fn checkpoint_round_trip_continues_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("mid.rhck").to_str().unwrap()).unwrap();
    let cfg = config(TORUS);
    unsafe {
        let mut whole = ptr::null_mut();
        let mut singular = false;
        assert_eq!(rh_flow_new(cfg, &mut whole), RhStatus::Ok);
        assert_eq!(rh_flow_advance(whole, 0.1, &mut singular), RhStatus::Ok);
        assert_eq!(rh_flow_save(whole, path.as_ptr()), RhStatus::Ok);
        assert_eq!(rh_flow_advance(whole, 0.2, &mut singular), RhStatus::Ok);

        let mut resumed = ptr::null_mut();
        assert_eq!(rh_flow_load(cfg, path.as_ptr(), &mut resumed), RhStatus::Ok, "{}", last_error());
        assert_eq!(diag(resumed).t, 0.1);
        assert_eq!(rh_flow_advance(resumed, 0.2, &mut singular), RhStatus::Ok);
        assert_eq!(diag(whole), diag(resumed));

        let missing = CString::new(dir.path().join("none.rhck").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(rh_flow_load(cfg, missing.as_ptr(), &mut none), RhStatus::Io);
        rh_flow_free(whole);
        rh_flow_free(resumed);
        rh_config_free(cfg);
    }
}

#[test]
fn execute_writes_artifacts_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "alpha": 0.5, "t_end": 1.5}"#);
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut code = -1;
    unsafe {
        assert_eq!(rh_execute(RhCommand::Run, cfg, out.as_ptr(), &mut code), RhStatus::Ok, "{}", last_error());
        assert_eq!(code, 3);
        assert_eq!(rh_execute(RhCommand::Verify, cfg, out.as_ptr(), &mut code), RhStatus::Config);
        rh_config_free(cfg);
        rh_config_free(ptr::null_mut());
        rh_flow_free(ptr::null_mut());
    }
    assert!(dir.path().join("singularity_report.json").exists());
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rhflow.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 12);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    if let Ok(out) = Command::new("cc").args(["-std=c11", "-fsyntax-only", "-x", "c"]).arg(&header_path).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
