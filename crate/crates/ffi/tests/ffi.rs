use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use awa_core::cli::{cmd_simulate, ExperimentConfig};
use awa_ffi::*;

fn simulated_round(dir: &Path, case: u8) -> PathBuf {
    let mut cfg = ExperimentConfig {
        seed: 13,
        ..ExperimentConfig::default()
    };
    cfg.apply_case(case).unwrap();
    let out = dir.join(format!("round{case}"));
    cmd_simulate(&cfg, &out).unwrap();
    out
}

fn load(dir: &Path) -> *mut AwaRound {
    let c = CString::new(dir.to_str().unwrap()).unwrap();
    let mut round = ptr::null_mut();
    assert_eq!(
        unsafe { awa_round_load(c.as_ptr(), &mut round) },
        AwaStatus::Ok
    );
    round
}

fn last_error() -> String {
    let p = awa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn round_accessors() {
    let tmp = tempfile::tempdir().unwrap();
    let round = load(&simulated_round(tmp.path(), 1));
    unsafe {
        assert_eq!(awa_round_dataset_size(round), 4);
        assert_eq!(awa_round_batch_len(round), 768);
        let mut shape = [0usize; 3];
        assert_eq!(
            awa_round_input_shape(round, shape.as_mut_ptr()),
            AwaStatus::Ok
        );
        assert_eq!(shape, [3, 8, 8]);
        let mut buf = vec![0.0; 768];
        assert_eq!(
            awa_round_ground_truth(round, buf.as_mut_ptr(), 767),
            AwaStatus::InvalidArgument
        );
        assert!(last_error().contains("768"));
        assert_eq!(
            awa_round_ground_truth(round, buf.as_mut_ptr(), 768),
            AwaStatus::Ok
        );
        assert!(buf.iter().all(|v| (0.0..=1.0).contains(v)));
        awa_round_free(round);
        awa_round_free(ptr::null_mut());
        assert_eq!(awa_round_dataset_size(ptr::null()), 0);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let missing = CString::new("/definitely/not/a/round").unwrap();
    let mut round = ptr::null_mut();
    assert_eq!(
        unsafe { awa_round_load(missing.as_ptr(), &mut round) },
        AwaStatus::Io
    );
    assert!(round.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { awa_round_load(ptr::null(), &mut round) },
        AwaStatus::NullPointer
    );
    // A successful call clears the message.
    assert_eq!(
        unsafe {
            awa_image_metrics(
                [0.5].as_ptr(),
                [0.5].as_ptr(),
                1,
                1,
                1,
                &mut AwaImageMetrics::default(),
            )
        },
        AwaStatus::Ok
    );
    assert!(awa_last_error_message().is_null());
    let zero = [0.0];
    assert_eq!(
        unsafe {
            awa_image_metrics(
                zero.as_ptr(),
                zero.as_ptr(),
                1,
                1,
                1,
                &mut AwaImageMetrics::default(),
            )
        },
        AwaStatus::Numerical
    );
}

#[test]
fn attack_and_metrics_through_the_abi() {
    let tmp = tempfile::tempdir().unwrap();
    let round = load(&simulated_round(tmp.path(), 2));
    let mut cfg = awa_attack_config_default();
    assert_eq!((cfg.iterations, cfg.lr, cfg.target_epoch), (1000, 0.1, 1));
    cfg.iterations = 10;
    cfg.weighted = false;
    unsafe {
        let mut res = ptr::null_mut();
        assert_eq!(
            awa_attack_run(round, &cfg, ptr::null(), &mut res),
            AwaStatus::Ok
        );
        assert!(awa_attack_result_objective(res).is_finite());
        assert_eq!(awa_attack_result_iterations(res), 10);
        assert!(!awa_attack_result_diverged(res));
        let mut q = [0.0; 6];
        assert_eq!(awa_attack_result_q(res, q.as_mut_ptr()), AwaStatus::Ok);
        assert_eq!(q, [1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let mut m = AwaImageMetrics::default();
        assert_eq!(
            awa_attack_result_matched_metrics(round, res, &mut m),
            AwaStatus::Ok
        );
        assert!(m.ssim <= 1.0 && m.mse >= 0.0);
        awa_attack_result_free(res);

        cfg.weighted = true;
        let mut res = ptr::null_mut();
        assert_eq!(
            awa_attack_run(round, &cfg, ptr::null(), &mut res),
            AwaStatus::InvalidArgument
        );
        let outside = [0.5, 1.0, 1.0, 1.0, 0.0, 0.0];
        assert_eq!(
            awa_attack_run(round, &cfg, outside.as_ptr(), &mut res),
            AwaStatus::InvalidArgument
        );
        assert!(res.is_null());
        awa_round_free(round);
    }
}

#[test]
fn tuning_is_reproducible_through_the_abi() {
    let tmp = tempfile::tempdir().unwrap();
    let round = load(&simulated_round(tmp.path(), 4));
    let mut atk = awa_attack_config_default();
    atk.iterations = 10;
    let mut bo = awa_bo_config_default();
    assert_eq!((bo.budget, bo.initial), (50, 12));
    bo.budget = 5;
    bo.initial = 3;
    let run = || unsafe {
        let mut q = [0.0; 6];
        let mut res = ptr::null_mut();
        assert_eq!(
            awa_tune(round, &atk, &bo, q.as_mut_ptr(), &mut res),
            AwaStatus::Ok
        );
        let f = awa_attack_result_objective(res);
        awa_attack_result_free(res);
        (q, f)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    unsafe { awa_round_free(round) };
}

#[test]
fn expected_improvement_matches_closed_form() {
    // μ = f_min, σ = 1: EI = φ(0) = 1/√(2π).
    let ei = awa_expected_improvement(0.0, 1.0, 0.0);
    assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    assert_eq!(awa_expected_improvement(1.0, 0.0, 0.0), 0.0);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(awa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn c_compiler() -> Option<String> {
    ["cc", "clang", "gcc"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(str::to_string)
}

/// `target/<profile>` of the running test binary.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

/// `cargo test` only builds the rlib, so fall back to a separate target
/// directory (no contention with the outer build lock).
fn static_library() -> PathBuf {
    let lib = profile_dir().join("libawa_ffi.a");
    if lib.is_file() {
        return lib;
    }
    let target = profile_dir().parent().unwrap().join("c-smoke");
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "awa-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .status()
        .unwrap();
    assert!(status.success(), "building the static library failed");
    target.join("debug/libawa_ffi.a")
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = c_compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = static_library();
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let build = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    let round = simulated_round(tmp.path(), 1);
    let run = Command::new(&exe).arg(&round).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("N=4 "));
}
