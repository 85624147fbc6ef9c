use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use firepbt_ffi::*;

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// target/<profile>, found from the test binary in target/<profile>/deps.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn curve(origin: u64, ys: &[f64]) -> *mut FpCurve {
    let c = fp_curve_new(origin);
    for (i, &y) in ys.iter().enumerate() {
        assert_eq!(unsafe { fp_curve_push(c, origin + 20 * i as u64, y) }, FpStatus::Ok);
    }
    c
}

fn empty_comparison() -> FpComparison {
    FpComparison {
        score_diff: f64::NAN,
        has_overlap: false,
        r: 0,
        s: 0,
        n: 0,
        used_penalization: false,
        p_value: f64::NAN,
    }
}

#[test]
fn comparison_matches_the_library() {
    let ys_a: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    let ys_b: Vec<f64> = (0..5).map(|i| 0.5 + 0.7 * i as f64 / 4.0).collect();
    let (a, b) = (curve(1000, &ys_a), curve(1500, &ys_b));
    let mut ab = empty_comparison();
    let mut ba = empty_comparison();
    unsafe {
        assert_eq!(fp_compare_curves(a, b, &mut ab), FpStatus::Ok);
        assert_eq!(fp_compare_curves(b, a, &mut ba), FpStatus::Ok);
    }
    let direct = firepbt::curve::best_score_diff(
        &firepbt::curve::TrainingCurve::from_points(1000, ys_a.iter().enumerate().map(|(i, &y)| (1000 + 20 * i as u64, y))).unwrap(),
        &firepbt::curve::TrainingCurve::from_points(1500, ys_b.iter().enumerate().map(|(i, &y)| (1500 + 20 * i as u64, y))).unwrap(),
    )
    .unwrap();
    assert_eq!(ab.score_diff, direct.score_diff);
    assert_eq!(ab.score_diff, -ba.score_diff);
    assert_eq!(ab.has_overlap, direct.overlap.is_some());

    let (mut p, mut has) = (0.0, false);
    assert_eq!(unsafe { fp_binom_test_curves(b, a, &mut p, &mut has) }, FpStatus::Ok);
    assert!(has);
    assert_eq!(p, ba.p_value);
    unsafe {
        fp_curve_free(a);
        fp_curve_free(b);
    }
}

#[test]
fn disjoint_curves_have_no_p_value() {
    let (a, b) = (curve(0, &[1.0; 6]), curve(1000, &[0.2, 0.3, 0.4, 0.5]));
    let mut cmp = empty_comparison();
    let (mut p, mut has) = (0.0, true);
    unsafe {
        assert_eq!(fp_compare_curves(a, b, &mut cmp), FpStatus::Ok);
        assert_eq!(fp_binom_test_curves(a, b, &mut p, &mut has), FpStatus::Ok);
        fp_curve_free(a);
        fp_curve_free(b);
    }
    assert!(!cmp.has_overlap && !has);
    assert!(p.is_nan() && cmp.p_value.is_nan());
}

#[test]
fn run_round_trips_through_handles() {
    let cfg = CString::new(
        r#"{"mode":"PBT","workers":4,
            "task":{"kind":"deceptive_lr","horizon":300},
            "mutation":{"lambda":{"multipliers":[0.5,2.0],"init_low":0.01,"init_high":1.0}},
            "eval_interval":20,"ready_interval":100,"seed":2}"#,
    )
    .unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { fp_run_experiment(cfg.as_ptr(), 2, &mut run) }, FpStatus::Ok);
    let events = unsafe { CStr::from_ptr(fp_run_events_jsonl(run)) }.to_str().unwrap().to_owned();
    let report = unsafe { CStr::from_ptr(fp_run_report_json(run)) }.to_str().unwrap().to_owned();
    unsafe { fp_run_free(run) };

    let log = firepbt::engine::EventLog::parse_jsonl(&events).unwrap();
    let rebuilt = firepbt::engine::report::build_report(&log).unwrap();
    let parsed: firepbt::engine::report::RunReport = serde_json::from_str(&report).unwrap();
    assert_eq!(parsed, rebuilt);
}

#[test]
fn bad_config_and_bad_utf8() {
    let mut run = ptr::null_mut();
    let invalid = CString::new(r#"{"mode":"RS","workers":0}"#).unwrap();
    assert_eq!(unsafe { fp_run_experiment(invalid.as_ptr(), 0, &mut run) }, FpStatus::Config);
    assert!(run.is_null());
    let msg = unsafe { CStr::from_ptr(fp_last_error_message()) };
    assert!(!msg.to_bytes().is_empty());

    let bytes = [b'{', 0xff, b'}', 0];
    assert_eq!(unsafe { fp_run_experiment(bytes.as_ptr().cast(), 0, &mut run) }, FpStatus::Utf8);
    assert_eq!(unsafe { fp_run_experiment(ptr::null(), 0, &mut run) }, FpStatus::NullPointer);
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(fp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = manifest_dir().join("include/firepbt.h");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = profile_dir().join("libfirepbt_ffi.a");
    assert!(lib.is_file(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-lrt", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "link: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "smoke: {}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
