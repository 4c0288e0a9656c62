use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use qpeuler_ffi::*;

fn last_error() -> String {
    let p = qp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn identity_modes(k: u32) -> *mut QpModeSet {
    let omega = [1.0, 0.0, 0.0, 1.0];
    let mut ms = ptr::null_mut();
    assert_eq!(unsafe { qp_modeset_new(2, 2, omega.as_ptr(), k, &mut ms) }, QpStatus::Ok);
    ms
}

#[test]
fn modeset_lifecycle() {
    let ms = identity_modes(2);
    assert_eq!(unsafe { qp_modeset_len(ms) }, 25);
    let (mut ok, mut sep) = (0, 0.0);
    assert_eq!(unsafe { qp_modeset_check_nonresonance(ms, 1e-9, &mut ok, &mut sep) }, QpStatus::Ok);
    assert_eq!(ok, 1);
    assert!((sep - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    unsafe { qp_modeset_free(ms) };
    unsafe { qp_modeset_free(ptr::null_mut()) };
    assert_eq!(unsafe { qp_modeset_len(ptr::null()) }, 0);
}

#[test]
fn resonant_matrix_is_reported() {
    let omega = [1.0, 1.0];
    let mut ms = ptr::null_mut();
    assert_eq!(unsafe { qp_modeset_new(2, 1, omega.as_ptr(), 2, &mut ms) }, QpStatus::Ok);
    let mut ok = 1;
    unsafe { qp_modeset_check_nonresonance(ms, 1e-9, &mut ok, ptr::null_mut()) };
    assert_eq!(ok, 0);
    unsafe { qp_modeset_free(ms) };
}

#[test]
fn bad_inputs_set_status_and_message() {
    let mut ms = ptr::null_mut();
    assert_eq!(unsafe { qp_modeset_new(2, 2, ptr::null(), 2, &mut ms) }, QpStatus::NullPointer);
    assert!(last_error().contains("omega"));
    let omega = [1.0, 2.0, 2.0, 4.0];
    assert_ne!(unsafe { qp_modeset_new(2, 2, omega.as_ptr(), 2, &mut ms) }, QpStatus::Ok);
    assert!(ms.is_null());
    assert!(!last_error().is_empty());

    let ms = identity_modes(1);
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { qp_field_zero(ms, &mut f) }, QpStatus::Ok);
    let m = [3, 0];
    assert_eq!(unsafe { qp_field_set_mode(f, m.as_ptr(), 2, 0, 1.0, 0.0) }, QpStatus::InvalidDimensions);
    let m = [0, 0];
    assert_eq!(unsafe { qp_field_set_mode(f, m.as_ptr(), 2, 0, 1.0, 1.0) }, QpStatus::InvalidArgument);
    assert_eq!(unsafe { qp_field_set_mode(f, m.as_ptr(), 2, 5, 1.0, 0.0) }, QpStatus::InvalidDimensions);
    unsafe {
        qp_field_free(f);
        qp_modeset_free(ms);
    }
}

#[test]
fn set_mode_evaluate_and_energy() {
    let ms = identity_modes(2);
    let mut f = ptr::null_mut();
    unsafe { qp_field_zero(ms, &mut f) };
    // u = (cos(2π x₂), 0)
    let m = [0, 1];
    assert_eq!(unsafe { qp_field_set_mode(f, m.as_ptr(), 2, 0, 0.5, 0.0) }, QpStatus::Ok);
    let (mut re, mut im) = (0.0, 0.0);
    let minus = [0, -1];
    unsafe { qp_field_coefficient(f, minus.as_ptr(), 2, 0, &mut re, &mut im) };
    assert_eq!((re, im), (0.5, 0.0));
    let x = [0.3, 0.125];
    let mut v = [0.0; 2];
    assert_eq!(unsafe { qp_field_evaluate(f, x.as_ptr(), 2, v.as_mut_ptr(), 2) }, QpStatus::Ok);
    assert!((v[0] - (2.0 * std::f64::consts::PI * 0.125).cos()).abs() < 1e-14);
    assert_eq!(v[1], 0.0);
    assert_eq!(unsafe { qp_field_evaluate(f, x.as_ptr(), 1, v.as_mut_ptr(), 2) }, QpStatus::InvalidDimensions);
    let mut e = 0.0;
    unsafe { qp_field_energy(f, &mut e) };
    assert!((e - 0.25).abs() < 1e-15);
    let mut d = 1.0;
    unsafe { qp_field_divergence_norm(f, &mut d) };
    assert_eq!(d, 0.0);

    let mut p = ptr::null_mut();
    assert_eq!(unsafe { qp_field_pressure_gradient(f, &mut p) }, QpStatus::Ok);
    unsafe { qp_field_energy(p, &mut e) };
    assert_eq!(e, 0.0);
    unsafe {
        qp_field_free(p);
        qp_field_free(f);
        qp_modeset_free(ms);
    }
}

#[test]
fn integrate_conserves_energy() {
    let ms = identity_modes(3);
    let mut u = ptr::null_mut();
    assert_eq!(unsafe { qp_field_random_divfree(ms, 7, 2, 0.05, 2.0, &mut u) }, QpStatus::Ok);
    let mut e0 = 0.0;
    unsafe { qp_field_energy(u, &mut e0) };
    let mut out = ptr::null_mut();
    let mut t = 0.0;
    assert_eq!(unsafe { qp_euler_integrate(u, 0.01, 0.05, 1e-10, &mut out, &mut t) }, QpStatus::Ok);
    let mut e1 = 0.0;
    unsafe { qp_field_energy(out, &mut e1) };
    assert!((t - 0.05).abs() < 1e-12);
    assert!(((e1 - e0) / e0).abs() < 1e-10);

    let mut bad = ptr::null_mut();
    let m = [1, 0];
    unsafe { qp_field_zero(ms, &mut bad) };
    unsafe { qp_field_set_mode(bad, m.as_ptr(), 2, 0, 0.5, 0.0) };
    assert_eq!(unsafe { qp_euler_integrate(bad, 0.01, 0.05, 1e-10, &mut out, &mut t) }, QpStatus::SolverAbort);
    assert!(last_error().contains("divergence"), "{}", last_error());
    unsafe {
        qp_field_free(out);
        qp_field_free(bad);
        qp_field_free(u);
        qp_modeset_free(ms);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/qpeuler.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["qp_modeset_new", "qp_field_set_mode", "qp_euler_integrate", "qp_last_error_message", "QP_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    if Command::new("cc").arg("--version").output().is_err() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"qpeuler.h\"\nint main(void) { QpModeSet *ms = 0; return (int)qp_modeset_len(ms) + QP_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}
