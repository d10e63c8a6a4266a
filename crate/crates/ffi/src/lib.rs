//! C ABI over `nlilab`.
//!
//! Complex sequences cross the boundary as interleaved `double` arrays
//! `[re0, im0, re1, im1, ...]`, one array per polarization, so a sequence of
//! `n` symbols occupies `2 * n` doubles. Every fallible function returns an
//! [`NliStatus`]; on failure [`nli_last_error`] describes what went wrong.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nlilab::fec::LdpcCode;
use nlilab::frp::{self, KernelMeta, KernelOrigin, KernelTensor};
use nlilab::rxdsp;
use nlilab::{DualPolSymbols, NliError};
use num_complex::Complex64;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NliStatus {
    Ok = 0,
    NullPointer = 1,
    InputShape = 2,
    InvalidInput = 3,
    Format = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque kernel tensor S on the cube [-M, M]^3.
pub struct NliKernel(KernelTensor);

/// Opaque LDPC code.
pub struct NliLdpc(LdpcCode);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NliEffectiveSnr {
    pub x_db: f64,
    pub y_db: f64,
    pub combined_db: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &NliError) -> NliStatus {
    match e {
        NliError::InputShape(_) | NliError::Index { .. } => NliStatus::InputShape,
        NliError::Input(_) | NliError::Config(_) => NliStatus::InvalidInput,
        NliError::Format(_) | NliError::Schema { .. } | NliError::Json(_) | NliError::Csv(_) => NliStatus::Format,
        NliError::Numerical(_) | NliError::Divergence { .. } | NliError::UndefinedMetric(_) => NliStatus::Numerical,
        NliError::Io(_) | NliError::MissingArtifact { .. } => NliStatus::Io,
    }
}

struct Fail(NliStatus, String);

impl From<NliError> for Fail {
    fn from(e: NliError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NliStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NliStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            NliStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(NliStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

fn unpack(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn pack(v: &[Complex64], out: &mut [f64]) {
    for (o, c) in out.chunks_exact_mut(2).zip(v) {
        o[0] = c.re;
        o[1] = c.im;
    }
}

unsafe fn symbols(x: *const f64, y: *const f64, n: usize, what: &str) -> Result<DualPolSymbols, Fail> {
    let x = input(x, 2 * n, what)?;
    let y = input(y, 2 * n, what)?;
    Ok(DualPolSymbols::new(unpack(x), unpack(y))?)
}

unsafe fn emit(s: &DualPolSymbols, out_x: *mut f64, out_y: *mut f64) -> Result<(), Fail> {
    let n = s.len();
    pack(&s.x_pol, output(out_x, 2 * n, "out_x")?);
    pack(&s.y_pol, output(out_y, 2 * n, "out_y")?);
    Ok(())
}

/// Message of the most recent failure on this thread, or NULL.
///
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nli_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// All-zero kernel of memory `memory`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_zeros(memory: usize, out: *mut *mut NliKernel) -> NliStatus {
    guard(|| put(out, NliKernel(KernelTensor::zeros(memory, KernelMeta::new(KernelOrigin::Analytic)))))
}

/// Kernel from `(2M+1)^3` interleaved complex values ordered k-major, then l, then m.
///
/// # Safety
/// `values` must point to `2 * len` doubles and `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_from_values(
    memory: usize,
    values: *const f64,
    len: usize,
    out: *mut *mut NliKernel,
) -> NliStatus {
    guard(|| {
        let v = unpack(input(values, 2 * len, "values")?);
        put(out, NliKernel(KernelTensor::from_values(memory, v, KernelMeta::new(KernelOrigin::Nbgd))?))
    })
}

/// Reads a kernel file written by `nlilab kernels-analytic` or `nlilab train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_load(path: *const c_char, out: *mut *mut NliKernel) -> NliStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(NliStatus::InvalidInput, "path is not UTF-8".into()))?;
        put(out, NliKernel(frp::kernel_read(path)?))
    })
}

/// Writes the kernel in the binary kernel format.
///
/// # Safety
/// `kernel` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_save(kernel: *const NliKernel, path: *const c_char) -> NliStatus {
    guard(|| {
        let k = handle(kernel, "kernel")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(NliStatus::InvalidInput, "path is not UTF-8".into()))?;
        Ok(frp::kernel_write(path, &k.0)?)
    })
}

/// Memory M of the kernel, or 0 for a null handle.
///
/// # Safety
/// `kernel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_memory(kernel: *const NliKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.0.memory())
}

/// Number of complex coefficients, `(2M+1)^3`, or 0 for a null handle.
///
/// # Safety
/// `kernel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_len(kernel: *const NliKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.0.values().len())
}

/// Copies the coefficients into `out` as interleaved complex values.
///
/// # Safety
/// `kernel` must be a live handle and `out` must hold `2 * len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_values(kernel: *const NliKernel, out: *mut f64, len: usize) -> NliStatus {
    guard(|| {
        let k = handle(kernel, "kernel")?;
        if len != k.0.values().len() {
            return Err(Fail(
                NliStatus::InputShape,
                format!("kernel has {} coefficients, buffer holds {len}", k.0.values().len()),
            ));
        }
        pack(k.0.values(), output(out, 2 * len, "out")?);
        Ok(())
    })
}

/// # Safety
/// `kernel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nli_kernel_free(kernel: *mut NliKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Perturbative NLI Δa of a periodic block of `n` dual-polarization symbols.
///
/// # Safety
/// `kernel` must be a live handle; every array must hold `2 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nli_frp_sequence(
    kernel: *const NliKernel,
    gamma: f64,
    es: f64,
    a_x: *const f64,
    a_y: *const f64,
    n: usize,
    out_x: *mut f64,
    out_y: *mut f64,
) -> NliStatus {
    guard(|| {
        let k = handle(kernel, "kernel")?;
        let a = symbols(a_x, a_y, n, "a")?;
        emit(&frp::frp_nli_sequence(&a, &k.0, gamma, es)?, out_x, out_y)
    })
}

/// ỹ = y − Δa(a) with Δa predicted from the transmitted symbols `a`.
///
/// # Safety
/// `kernel` must be a live handle; every array must hold `2 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nli_genie_cancel(
    kernel: *const NliKernel,
    gamma: f64,
    es: f64,
    y_x: *const f64,
    y_y: *const f64,
    a_x: *const f64,
    a_y: *const f64,
    n: usize,
    out_x: *mut f64,
    out_y: *mut f64,
) -> NliStatus {
    guard(|| {
        let k = handle(kernel, "kernel")?;
        let y = symbols(y_x, y_y, n, "y")?;
        let a = symbols(a_x, a_y, n, "a")?;
        emit(&rxdsp::genie_cancel(&y, &a, &k.0, gamma, es)?, out_x, out_y)
    })
}

/// Effective SNR of received symbols against the transmitted reference.
///
/// # Safety
/// Every array must hold `2 * n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nli_effective_snr(
    y_x: *const f64,
    y_y: *const f64,
    a_x: *const f64,
    a_y: *const f64,
    n: usize,
    out: *mut NliEffectiveSnr,
) -> NliStatus {
    guard(|| {
        let y = symbols(y_x, y_y, n, "y")?;
        let a = symbols(a_x, a_y, n, "a")?;
        let s = rxdsp::effective_snr(&y, &a)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = NliEffectiveSnr {
            x_db: s.x_db,
            y_db: s.y_db,
            combined_db: s.combined_db,
        };
        Ok(())
    })
}

/// The IEEE 802.11 length-648 rate-3/4 code.
///
/// # Safety
/// `out` must be valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn nli_ldpc_new(out: *mut *mut NliLdpc) -> NliStatus {
    guard(|| put(out, NliLdpc(LdpcCode::ieee80211_n648_r34())))
}

/// Block length n, or 0 for a null handle.
///
/// # Safety
/// `code` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nli_ldpc_n(code: *const NliLdpc) -> usize {
    code.as_ref().map_or(0, |c| c.0.n())
}

/// Information length k, or 0 for a null handle.
///
/// # Safety
/// `code` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nli_ldpc_k(code: *const NliLdpc) -> usize {
    code.as_ref().map_or(0, |c| c.0.k())
}

/// Systematic encoding of `k` bits (one per byte, 0 or 1) into `n` bits.
///
/// # Safety
/// `code` must be a live handle, `info` must hold `info_len` bytes and `codeword` `codeword_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nli_ldpc_encode(
    code: *const NliLdpc,
    info: *const u8,
    info_len: usize,
    codeword: *mut u8,
    codeword_len: usize,
) -> NliStatus {
    guard(|| {
        let c = handle(code, "code")?;
        if codeword_len != c.0.n() {
            return Err(Fail(NliStatus::InputShape, format!("codeword buffer must hold {} bits", c.0.n())));
        }
        let cw = c.0.encode(input(info, info_len, "info")?)?;
        output(codeword, codeword_len, "codeword")?.copy_from_slice(&cw);
        Ok(())
    })
}

/// Sum-product decoding of `n` LLRs, ln P(0)/P(1).
///
/// Writes the `k` decoded information bits; `converged` and `iterations` may be null.
///
/// # Safety
/// `code` must be a live handle, `llrs` must hold `llr_len` doubles and `info` `info_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nli_ldpc_decode(
    code: *const NliLdpc,
    llrs: *const f64,
    llr_len: usize,
    max_iter: usize,
    info: *mut u8,
    info_len: usize,
    converged: *mut bool,
    iterations: *mut usize,
) -> NliStatus {
    guard(|| {
        let c = handle(code, "code")?;
        if info_len != c.0.k() {
            return Err(Fail(NliStatus::InputShape, format!("info buffer must hold {} bits", c.0.k())));
        }
        let d = c.0.decode(input(llrs, llr_len, "llrs")?, max_iter)?;
        output(info, info_len, "info")?.copy_from_slice(&d.info);
        if let Some(v) = converged.as_mut() {
            *v = d.converged;
        }
        if let Some(v) = iterations.as_mut() {
            *v = d.iterations;
        }
        Ok(())
    })
}

/// # Safety
/// `code` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nli_ldpc_free(code: *mut NliLdpc) {
    if !code.is_null() {
        drop(Box::from_raw(code));
    }
}
