//! C ABI over the `tandemnet` runtime.
//!
//! Networks are loaded from checkpoints into opaque [`TnNetwork`] handles.
//! Every function returns a [`TnStatus`]; on failure a message is available
//! from [`tn_last_error`] on the same thread. Inputs are row-major
//! `[batch × features]` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tandemnet::codec::{argmax, encode_constant_current};
use tandemnet::data::load_checkpoint;
use tandemnet::metrics::synops_report;
use tandemnet::net::{inference_snn, TandemNetwork};
use tandemnet::tensor::DenseTensor;
use tandemnet::TandemError;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Corrupt, truncated or unsupported checkpoint or data.
    Format = 4,
    Shape = 5,
    Numeric = 6,
    State = 7,
    Panic = 8,
}

/// Opaque network handle.
pub struct TnNetwork {
    net: TandemNetwork,
}

/// Synaptic operation totals per input sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TnSynops {
    pub snn_total: f64,
    pub ann_total: u64,
    pub ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &TandemError) -> TnStatus {
    match e {
        TandemError::Io { .. } => TnStatus::Io,
        TandemError::Crc { .. } | TandemError::Version(_) | TandemError::Data(_) => TnStatus::Format,
        TandemError::Shape(_) => TnStatus::Shape,
        TandemError::Numeric(_) => TnStatus::Numeric,
        TandemError::State(_) => TnStatus::State,
        TandemError::Parameter(_) | TandemError::Config(_) => TnStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TnStatus>) -> TnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TnStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            TnStatus::Panic
        }
    }
}

fn fail(e: TandemError) -> TnStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> TnStatus {
    set_error(&format!("{what} is null"));
    TnStatus::NullPointer
}

unsafe fn handle<'a>(net: *const TnNetwork) -> Result<&'a TnNetwork, TnStatus> {
    net.as_ref().ok_or_else(|| null("network handle"))
}

unsafe fn input_tensor(
    net: &TandemNetwork,
    input: *const f64,
    batch: usize,
    features: usize,
) -> Result<DenseTensor, TnStatus> {
    if input.is_null() {
        return Err(null("input"));
    }
    if batch == 0 || features != net.input_size() {
        set_error(&format!(
            "expected batch ≥ 1 and {} features, got batch {batch} with {features}",
            net.input_size()
        ));
        return Err(TnStatus::Shape);
    }
    let data = std::slice::from_raw_parts(input, batch * features).to_vec();
    DenseTensor::new(vec![batch, features], data).map_err(fail)
}

/// Message describing the last failure on this thread. Never null; valid
/// until the next call on this thread.
#[no_mangle]
pub extern "C" fn tn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a NUL-terminated string.
#[no_mangle]
pub extern "C" fn tn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` owns a handle to release with
/// [`tn_network_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tn_network_load(path: *const c_char, out: *mut *mut TnNetwork) -> TnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            set_error("path is not UTF-8");
            TnStatus::InvalidArgument
        })?;
        let net = load_checkpoint(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(TnNetwork { net }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from [`tn_network_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tn_network_free(net: *mut TnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input features, output units and window size of a network.
///
/// # Safety
/// `net` must be a live handle; each out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn tn_network_dims(
    net: *const TnNetwork,
    inputs: *mut usize,
    outputs: *mut usize,
    window: *mut usize,
) -> TnStatus {
    guard(|| {
        let h = handle(net)?;
        for (p, v) in [
            (inputs, h.net.input_size()),
            (outputs, h.net.output_size()),
            (window, h.net.window()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Changes the simulation window.
///
/// # Safety
/// `net` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn tn_network_set_window(net: *mut TnNetwork, window: usize) -> TnStatus {
    guard(|| {
        let h = net.as_mut().ok_or_else(|| null("network handle"))?;
        h.net.set_window(window).map_err(fail)
    })
}

/// Spiking inference. Writes `batch × outputs` decoded scores to `out`,
/// whose capacity is `out_len` doubles.
///
/// # Safety
/// `input` must hold `batch × features` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tn_network_infer(
    net: *const TnNetwork,
    input: *const f64,
    batch: usize,
    features: usize,
    out: *mut f64,
    out_len: usize,
) -> TnStatus {
    guard(|| {
        let h = handle(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = input_tensor(&h.net, input, batch, features)?;
        let need = batch * h.net.output_size();
        if out_len < need {
            set_error(&format!("output buffer holds {out_len} values, {need} needed"));
            return Err(TnStatus::Shape);
        }
        let enc = encode_constant_current(&x, h.net.window()).map_err(fail)?;
        let y = inference_snn(&h.net, &enc).map_err(fail)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(y.data());
        Ok(())
    })
}

/// Spiking inference followed by argmax; writes `batch` class indices.
///
/// # Safety
/// `input` must hold `batch × features` doubles and `classes` `batch` slots.
#[no_mangle]
pub unsafe extern "C" fn tn_network_classify(
    net: *const TnNetwork,
    input: *const f64,
    batch: usize,
    features: usize,
    classes: *mut usize,
) -> TnStatus {
    guard(|| {
        let h = handle(net)?;
        if classes.is_null() {
            return Err(null("classes"));
        }
        let x = input_tensor(&h.net, input, batch, features)?;
        let enc = encode_constant_current(&x, h.net.window()).map_err(fail)?;
        let y = inference_snn(&h.net, &enc).map_err(fail)?;
        let dst = std::slice::from_raw_parts_mut(classes, batch);
        for (d, row) in dst.iter_mut().zip(y.data().chunks(h.net.output_size())) {
            *d = argmax(row);
        }
        Ok(())
    })
}

/// Synaptic operations of the spiking network on a batch.
///
/// # Safety
/// `input` must hold `batch × features` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_network_synops(
    net: *const TnNetwork,
    input: *const f64,
    batch: usize,
    features: usize,
    out: *mut TnSynops,
) -> TnStatus {
    guard(|| {
        let h = handle(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = input_tensor(&h.net, input, batch, features)?;
        let enc = encode_constant_current(&x, h.net.window()).map_err(fail)?;
        let r = synops_report(&h.net, &enc).map_err(fail)?;
        *out = TnSynops {
            snn_total: r.snn_total,
            ann_total: r.ann_total,
            ratio: r.ratio,
        };
        Ok(())
    })
}
