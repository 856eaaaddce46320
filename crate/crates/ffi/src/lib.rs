//! C ABI for the qreset library.
//!
//! Every function returns a [`QresetStatus`] and writes results through
//! out-pointers. On failure the message is kept per thread and can be read
//! with [`qreset_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qreset::fdt::{estimate_mean_fdt, HorizonPolicy};
use qreset::propagation::{peak_offset, LatticeConfig};
use qreset::protocols::{rc_default, Protocol, RestartKernel, RestartSchedule, SwitchPoint};
use qreset::specfun::bessel_j;
use qreset::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QresetStatus {
    Ok = 0,
    NullPointer = 1,
    InputDomain = 2,
    Parameter = 3,
    Length = 4,
    Divergent = 5,
    Fit = 6,
    Budget = 7,
    Panic = 8,
}

/// Restart protocol family.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QresetProtocolKind {
    Ipr = 0,
    Mpr = 1,
    AdaptiveMpr = 2,
}

/// Protocol parameters. Fields not used by `kind` are ignored.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QresetProtocol {
    pub kind: QresetProtocolKind,
    /// Right-hop probability for MPR.
    pub p: f64,
    pub p_initial: f64,
    pub p_final: f64,
    /// Switch point of the adaptive protocol; 0 picks it automatically.
    pub rc: usize,
}

/// Opaque restart kernel bound to one protocol, schedule and geometry.
pub struct QresetKernel {
    inner: RestartKernel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> QresetStatus {
    match err {
        Error::InputDomain(_) => QresetStatus::InputDomain,
        Error::Parameter(_) => QresetStatus::Parameter,
        Error::Length { .. } => QresetStatus::Length,
        Error::Divergent(_) => QresetStatus::Divergent,
        Error::Fit(_) => QresetStatus::Fit,
        Error::Budget(_) => QresetStatus::Budget,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> QresetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => QresetStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            QresetStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            QresetStatus::Panic
        }
    }
}

fn non_null<T>(ptr: *const T, what: &'static str) -> Result<(), Fail> {
    if ptr.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(())
    }
}

fn to_protocol(p: &QresetProtocol) -> Protocol {
    match p.kind {
        QresetProtocolKind::Ipr => Protocol::Ipr,
        QresetProtocolKind::Mpr => Protocol::Mpr { p: p.p },
        QresetProtocolKind::AdaptiveMpr => Protocol::AdaptiveMpr {
            p_initial: p.p_initial,
            p_final: p.p_final,
            switch: if p.rc == 0 { SwitchPoint::Auto } else { SwitchPoint::Fixed(p.rc) },
        },
    }
}

/// Copies the calling thread's last error message into `buf`, NUL-terminated
/// and truncated to `cap` bytes. Returns the full message length plus one,
/// or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qreset_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qreset_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `J_n(x)` for `n >= 0`, `x >= 0`.
///
/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qreset_bessel_j(n: i32, x: f64, out: *mut f64) -> QresetStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = bessel_j(n, x)?;
        Ok(())
    })
}

/// Most probable hop length after free evolution for `t_r`.
///
/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qreset_peak_offset(t_r: f64, out: *mut u64) -> QresetStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = peak_offset(t_r)?.delta_offset;
        Ok(())
    })
}

/// Automatic switch point of the adaptive protocol.
///
/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qreset_rc_default(
    distance: i64,
    delta_offset: u64,
    p_initial: f64,
    out: *mut usize,
) -> QresetStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = rc_default(distance, delta_offset, p_initial)?;
        Ok(())
    })
}

/// Builds a restart kernel. Release it with [`qreset_kernel_free`].
///
/// # Safety
/// `protocol` must be null or point to a valid `QresetProtocol` whose `kind` is
/// one of the declared enumerators; `out` must be
/// null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qreset_kernel_new(
    protocol: *const QresetProtocol,
    r: usize,
    tau: f64,
    delta: i64,
    x0: i64,
    out: *mut *mut QresetKernel,
) -> QresetStatus {
    guard(|| {
        non_null(protocol, "protocol")?;
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let proto = to_protocol(&*protocol);
        let cfg = LatticeConfig::new(tau, delta, x0, 1)?;
        let sched = RestartSchedule::new(r, tau)?;
        let inner = RestartKernel::new(&proto, &sched, &cfg)?;
        *out = Box::into_raw(Box::new(QresetKernel { inner }));
        Ok(())
    })
}

/// Releases a kernel. Null is ignored.
///
/// # Safety
/// `kernel` must be null or a pointer from [`qreset_kernel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qreset_kernel_free(kernel: *mut QresetKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Peak offset `Δ` the kernel hops by.
///
/// # Safety
/// `kernel` must come from [`qreset_kernel_new`]; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qreset_kernel_delta_offset(kernel: *const QresetKernel, out: *mut u64) -> QresetStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(out, "out")?;
        *out = (*kernel).inner.protocol().delta_offset;
        Ok(())
    })
}

/// Writes `F_n`, `P_det(n)` and `S_n` for `n = 1..=len`. Any of the three
/// buffers may be null to skip it; non-null buffers hold `len` doubles.
///
/// # Safety
/// `kernel` must come from [`qreset_kernel_new`]; each non-null buffer must be
/// valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qreset_kernel_series(
    kernel: *const QresetKernel,
    len: usize,
    f: *mut f64,
    p_det: *mut f64,
    survival: *mut f64,
) -> QresetStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        if len == 0 {
            return Err(Error::InputDomain("series length must be >= 1".into()).into());
        }
        let series = (*kernel).inner.series(len);
        for (dst, src) in [(f, &series.f), (p_det, &series.p_det), (survival, &series.s)] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, len).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Mean first-detection time with the default horizon policy.
///
/// `stable` (nullable) receives 1 when the extrapolation is insensitive to
/// the fit degree, 0 otherwise. A divergent mean returns
/// `QRESET_STATUS_DIVERGENT`.
///
/// # Safety
/// `kernel` must come from [`qreset_kernel_new`]; `mean` must be valid for one
/// write; `stable` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn qreset_kernel_mean_fdt(
    kernel: *const QresetKernel,
    mean: *mut f64,
    stable: *mut i32,
) -> QresetStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(mean, "mean")?;
        let est = estimate_mean_fdt(&(*kernel).inner, &HorizonPolicy::default())?;
        *mean = est.value;
        if !stable.is_null() {
            *stable = i32::from(est.stable);
        }
        Ok(())
    })
}
