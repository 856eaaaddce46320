use std::ffi::{c_char, CStr};
use std::ptr;

use qreset_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { qreset_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn protocol(kind: QresetProtocolKind) -> QresetProtocol {
    QresetProtocol { kind, p: 0.5, p_initial: 1.0, p_final: 0.5, rc: 0 }
}

fn kernel(proto: &QresetProtocol, r: usize) -> *mut QresetKernel {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { qreset_kernel_new(proto, r, 0.25, 10, 0, &mut k) }, QresetStatus::Ok);
    assert!(!k.is_null());
    k
}

#[test]
fn scalars() {
    let mut v = 0.0;
    assert_eq!(unsafe { qreset_bessel_j(1, 1.0, &mut v) }, QresetStatus::Ok);
    assert!((v - 0.440_050_585_744_933_5).abs() < 1e-15);
    let mut d = 0u64;
    assert_eq!(unsafe { qreset_peak_offset(3.0, &mut d) }, QresetStatus::Ok);
    assert_eq!(d, 5);
    let mut rc = 0usize;
    assert_eq!(unsafe { qreset_rc_default(10, 7, 0.6, &mut rc) }, QresetStatus::Ok);
    assert_eq!(rc, 7);
    let version = unsafe { CStr::from_ptr(qreset_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn errors_map_to_codes() {
    let mut v = 0.0;
    assert_eq!(unsafe { qreset_bessel_j(-1, 1.0, &mut v) }, QresetStatus::InputDomain);
    assert!(last_error().contains("input domain"));
    assert_eq!(unsafe { qreset_bessel_j(0, 1.0, ptr::null_mut()) }, QresetStatus::NullPointer);
    assert_eq!(last_error(), "null pointer: out");
    let mut rc = 0usize;
    assert_eq!(unsafe { qreset_rc_default(10, 5, 0.4, &mut rc) }, QresetStatus::Parameter);

    let bad = QresetProtocol { p: 1.5, ..protocol(QresetProtocolKind::Mpr) };
    let mut k = 1 as *mut QresetKernel;
    assert_eq!(unsafe { qreset_kernel_new(&bad, 24, 0.25, 10, 0, &mut k) }, QresetStatus::Parameter);
    assert!(k.is_null());
    assert_eq!(unsafe { qreset_kernel_new(&bad, 24, -1.0, 10, 0, ptr::null_mut()) }, QresetStatus::NullPointer);
}

#[test]
fn truncated_error_message() {
    let mut v = 0.0;
    unsafe { qreset_bessel_j(-3, 1.0, &mut v) };
    let full = unsafe { qreset_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as c_char; 8];
    assert_eq!(unsafe { qreset_last_error(buf.as_mut_ptr(), buf.len()) }, full);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 7);
}

#[test]
fn errors_are_per_thread() {
    let mut v = 0.0;
    unsafe { qreset_bessel_j(-1, 1.0, &mut v) };
    let other = std::thread::spawn(|| unsafe { qreset_last_error(ptr::null_mut(), 0) }).join().unwrap();
    assert_eq!(other, 0);
}

#[test]
fn series_matches_core() {
    use qreset::propagation::LatticeConfig;
    use qreset::protocols::{series_under_restart, Protocol, RestartSchedule};

    let k = kernel(&protocol(QresetProtocolKind::Mpr), 24);
    let mut d = 0u64;
    assert_eq!(unsafe { qreset_kernel_delta_offset(k, &mut d) }, QresetStatus::Ok);
    assert_eq!(d, 10);
    let len = 500;
    let (mut f, mut s) = (vec![0.0; len], vec![0.0; len]);
    let status = unsafe { qreset_kernel_series(k, len, f.as_mut_ptr(), ptr::null_mut(), s.as_mut_ptr()) };
    assert_eq!(status, QresetStatus::Ok);
    let cfg = LatticeConfig::default();
    let sched = RestartSchedule::new(24, 0.25).unwrap();
    let core = series_under_restart(&Protocol::Mpr { p: 0.5 }, &sched, &cfg, len).unwrap();
    assert_eq!(f, core.f);
    assert_eq!(s, core.s);
    assert_eq!(unsafe { qreset_kernel_series(k, 0, f.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) }, QresetStatus::InputDomain);
    unsafe { qreset_kernel_free(k) };
    unsafe { qreset_kernel_free(ptr::null_mut()) };
}

#[test]
fn mean_fdt_through_the_abi() {
    let k = kernel(&protocol(QresetProtocolKind::Ipr), 27);
    let (mut mean, mut stable) = (0.0, -1);
    assert_eq!(unsafe { qreset_kernel_mean_fdt(k, &mut mean, &mut stable) }, QresetStatus::Ok);
    assert!((mean - 86.395).abs() < 1e-2, "{mean}");
    assert_eq!(stable, 1);
    unsafe { qreset_kernel_free(k) };

    // Δ = 500 at this window, so the walker can never come back
    let mut far = ptr::null_mut();
    let ipr = protocol(QresetProtocolKind::Ipr);
    assert_eq!(unsafe { qreset_kernel_new(&ipr, 4, 0.25, 500, 0, &mut far) }, QresetStatus::Ok);
    assert_eq!(unsafe { qreset_kernel_mean_fdt(far, &mut mean, ptr::null_mut()) }, QresetStatus::Divergent);
    unsafe { qreset_kernel_free(far) };
}

#[test]
fn adaptive_kernel_builds_with_auto_switch() {
    let k = kernel(&protocol(QresetProtocolKind::AdaptiveMpr), 24);
    let mut f = vec![0.0; 48];
    assert_eq!(unsafe { qreset_kernel_series(k, 48, f.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) }, QresetStatus::Ok);
    assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    unsafe { qreset_kernel_free(k) };
}

#[test]
fn header_is_current_and_compiles() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = std::fs::read_to_string(format!("{dir}/include/qreset.h")).unwrap();
    for name in ["qreset_kernel_new", "qreset_kernel_free", "qreset_last_error", "QRESET_STATUS_DIVERGENT"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", &format!("{dir}/include/qreset.h")])
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
