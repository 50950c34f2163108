//! C ABI over `efnet`.
//!
//! Networks are opaque `EfnetNetwork` handles created by a loader or
//! builder and released with `efnet_network_free`. Every fallible call
//! returns an `EfnetStatus`; on failure the message is available from
//! `efnet_last_error_message` on the same thread until the next failing
//! call. Arrays are caller-owned; matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use efnet::constructions::{build_sign_network, SignNetSpec};
use efnet::data::{load_checkpoint, save_checkpoint};
use efnet::network::Network;
use efnet::ops::{self, OpCounter};
use efnet::{ef, Error, Matrix, Vector};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfnetStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Parameter = 3,
    Format = 4,
    Version = 5,
    Checkpoint = 6,
    Io = 7,
    InvalidUtf8 = 8,
    Panic = 9,
    Other = 10,
}

/// Forward-pass operation tallies.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EfnetOpCounts {
    pub mults: u64,
    pub adds: u64,
    pub signs: u64,
    pub compares: u64,
    pub abs_ops: u64,
    pub negations: u64,
}

impl From<OpCounter> for EfnetOpCounts {
    fn from(c: OpCounter) -> Self {
        EfnetOpCounts {
            mults: c.mults,
            adds: c.adds,
            signs: c.signs,
            compares: c.compares,
            abs_ops: c.abs_ops,
            negations: c.negations,
        }
    }
}

/// Opaque network handle.
pub struct EfnetNetwork {
    net: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> EfnetStatus {
    match e {
        Error::Shape(_) => EfnetStatus::Shape,
        Error::Parameter(_) => EfnetStatus::Parameter,
        Error::Format { .. } => EfnetStatus::Format,
        Error::Version { .. } => EfnetStatus::Version,
        Error::Checkpoint(_) => EfnetStatus::Checkpoint,
        Error::Io { .. } => EfnetStatus::Io,
        _ => EfnetStatus::Other,
    }
}

struct Fail(EfnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EfnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EfnetStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EfnetStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(EfnetStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            EfnetStatus::InvalidUtf8,
            "path is not valid UTF-8".to_string(),
        )
    })
}

/// # Safety
/// `h` must be null or a live handle.
unsafe fn handle<'a>(h: *const EfnetNetwork) -> Result<&'a Network, Fail> {
    h.as_ref().map(|h| &h.net).ok_or_else(|| null("network"))
}

fn hand_out(net: Network, out: *mut *mut EfnetNetwork) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(EfnetNetwork { net })) };
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn efnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `out = Σ sign(x_i y_i)(|x_i| + |y_i|)`.
///
/// # Safety
/// `x` and `y` must point to `len` values and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn efnet_ef_dot(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> EfnetStatus {
    guard(|| {
        let x = slice(x, len, "x")?;
        let y = slice(y, len, "y")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ef::ef_dot(&Vector::from(x), &Vector::from(y))?;
        Ok(())
    })
}

/// `out = x ◇ W` for row-major `W` of shape `d × m`.
///
/// # Safety
/// `x` must hold `d` values, `w` `d * m` values and `out` room for `m`.
#[no_mangle]
pub unsafe extern "C" fn efnet_ef_matprod(
    x: *const f64,
    d: usize,
    w: *const f64,
    m: usize,
    out: *mut f64,
) -> EfnetStatus {
    guard(|| {
        let x = slice(x, d, "x")?;
        let w = slice(w, d * m, "w")?;
        let out = slice_mut(out, m, "out")?;
        let w = Matrix::from_vec(d, m, w.to_vec())?;
        out.copy_from_slice(ef::ef_matprod(&Vector::from(x), &w)?.as_slice());
        Ok(())
    })
}

/// Loads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_load(
    path: *const c_char,
    out: *mut *mut EfnetNetwork,
) -> EfnetStatus {
    guard(|| {
        let p = c_path(path)?;
        hand_out(load_checkpoint(p)?, out)
    })
}

/// Writes the network as a checkpoint file.
///
/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_save(
    net: *const EfnetNetwork,
    path: *const c_char,
) -> EfnetStatus {
    guard(|| {
        let net = handle(net)?;
        save_checkpoint(net, c_path(path)?)?;
        Ok(())
    })
}

/// Builds the four-layer additive network computing `sign(yᵀx + bias)`.
///
/// # Safety
/// `y` must hold `d` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn efnet_sign_network_new(
    y: *const f64,
    d: usize,
    bias: f64,
    out: *mut *mut EfnetNetwork,
) -> EfnetStatus {
    guard(|| {
        let y = slice(y, d, "y")?;
        let spec = SignNetSpec::new(y.to_vec(), bias)?;
        hand_out(build_sign_network(&spec)?, out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_free(net: *mut EfnetNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input length, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_input_len(net: *const EfnetNetwork) -> usize {
    net.as_ref().map_or(0, |h| h.net.input_len())
}

/// Output length, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_output_len(net: *const EfnetNetwork) -> usize {
    net.as_ref().map_or(0, |h| h.net.output_len())
}

/// Runs a forward pass. `counts` may be null; otherwise it receives the
/// operation tallies of this pass.
///
/// # Safety
/// `net` must be a live handle, `x` hold `x_len` values and `out` room for
/// `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_predict(
    net: *const EfnetNetwork,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
    counts: *mut EfnetOpCounts,
) -> EfnetStatus {
    guard(|| {
        let net = handle(net)?;
        let x = slice(x, x_len, "x")?;
        let dst = slice_mut(out, out_len, "out")?;
        if out_len != net.output_len() {
            return Err(Fail(
                EfnetStatus::Shape,
                format!(
                    "output buffer holds {out_len}, network produces {}",
                    net.output_len()
                ),
            ));
        }
        let (y, tally) = ops::scoped_count(|| net.predict(&Vector::from(x)));
        dst.copy_from_slice(y?.as_slice());
        if let Some(c) = counts.as_mut() {
            *c = tally.into();
        }
        Ok(())
    })
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn efnet_network_param_count(net: *const EfnetNetwork) -> usize {
    net.as_ref().map_or(0, |h| h.net.param_count())
}
