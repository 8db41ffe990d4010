//! C ABI over the worp sketches and samplers.
//!
//! Every fallible function returns a [`WorpStatus`]; on failure the message
//! is kept per thread and read back with [`worp_last_error`]. Handles are
//! opaque and owned by the caller until passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use worp::{
    estimate_statistic, Error, ElementFile, Flavor, FreqFn, Key, RDist, RhhConfig, RhhSketch, StatisticSpec,
    WorSample, WorpConfig,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    RejectedElement = 4,
    RejectedUpdate = 5,
    Merge = 6,
    DegenerateInput = 7,
    Calibration = 8,
    Format = 9,
    Io = 10,
    Other = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorpFlavor {
    /// CountSketch; accepts signed values.
    Projection = 2,
    /// Space-Saving counters; non-negative values only.
    Counter = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorpRDist {
    Exp1 = 0,
    Uniform01 = 1,
}

/// Opaque rHH sketch.
pub struct WorpSketch(RhhSketch);

/// Opaque without-replacement sample.
pub struct WorpSample(WorSample);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> WorpStatus {
    match e {
        Error::RejectedElement(_) => WorpStatus::RejectedElement,
        Error::Config(_) | Error::Domain(_) => WorpStatus::Config,
        Error::RejectedUpdate(_) => WorpStatus::RejectedUpdate,
        Error::Merge(_) => WorpStatus::Merge,
        Error::DegenerateInput(_) | Error::DegenerateThreshold(_) => WorpStatus::DegenerateInput,
        Error::Calibration(_) => WorpStatus::Calibration,
        Error::Format(_) | Error::Json(_) => WorpStatus::Format,
        Error::Io(_) => WorpStatus::Io,
        Error::Evaluation(_) => WorpStatus::Other,
    }
}

fn fail(status: WorpStatus, msg: impl Into<String>) -> WorpStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), WorpStatus>) -> WorpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WorpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(WorpStatus::Panic, "panic inside worp"),
    }
}

fn lift<T>(r: worp::Result<T>) -> Result<T, WorpStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), WorpStatus> {
    if p.is_null() {
        Err(fail(WorpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, WorpStatus> {
    nonnull(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(WorpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn key_from(ptr: *const u8, len: usize) -> Result<Key, WorpStatus> {
    nonnull(ptr, "key")?;
    lift(Key::new(std::slice::from_raw_parts(ptr, len)))
}

fn flavor(f: WorpFlavor) -> Flavor {
    match f {
        WorpFlavor::Projection => Flavor::Projection,
        WorpFlavor::Counter => Flavor::Counter,
    }
}

fn rdist(d: WorpRDist) -> RDist {
    match d {
        WorpRDist::Exp1 => RDist::Exp1,
        WorpRDist::Uniform01 => RDist::Uniform01,
    }
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn worp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a sketch for top-`k` recovery with rHH parameter `psi`.
/// Zero `rows`/`width` (projection) or `capacity` (counter) selects the
/// derived size.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn worp_sketch_new(
    flavor_: WorpFlavor,
    k: usize,
    psi: f64,
    delta: f64,
    n: u64,
    seed: u64,
    rows: usize,
    width: usize,
    capacity: usize,
    out: *mut *mut WorpSketch,
) -> WorpStatus {
    guard(|| {
        nonnull(out, "out")?;
        let mut cfg = RhhConfig::new(flavor(flavor_), k, psi, delta, n, seed);
        if rows > 0 && width > 0 {
            cfg = cfg.with_projection_shape(rows, width);
        }
        if capacity > 0 {
            cfg = cfg.with_counter_capacity(capacity);
        }
        let s = lift(RhhSketch::init(cfg))?;
        *out = Box::into_raw(Box::new(WorpSketch(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_free(s: *mut WorpSketch) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Adds `value` to the (already transformed) key `key`.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_process(s: *mut WorpSketch, key: u64, value: f64) -> WorpStatus {
    guard(|| {
        nonnull(s, "sketch")?;
        lift((*s).0.process(key, value))
    })
}

/// Merges `other` into `s`. Both must share a configuration.
///
/// # Safety
/// Both must be live handles; they may not alias.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_merge(s: *mut WorpSketch, other: *const WorpSketch) -> WorpStatus {
    guard(|| {
        nonnull(s, "sketch")?;
        nonnull(other, "other")?;
        if ptr::eq(s, other) {
            return Err(fail(WorpStatus::InvalidArgument, "cannot merge a sketch into itself"));
        }
        lift((*s).0.merge(&(*other).0))
    })
}

/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_estimate(s: *const WorpSketch, key: u64, out: *mut f64) -> WorpStatus {
    guard(|| {
        nonnull(s, "sketch")?;
        nonnull(out, "out")?;
        *out = (*s).0.est(key);
        Ok(())
    })
}

/// Sketch size in 64-bit words.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_size_words(s: *const WorpSketch) -> usize {
    if s.is_null() {
        return 0;
    }
    (*s).0.size_words()
}

/// Serializes the sketch. Release the buffer with [`worp_bytes_free`].
///
/// # Safety
/// `s` must be a live handle; `out_ptr` and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_serialize(
    s: *const WorpSketch,
    out_ptr: *mut *mut u8,
    out_len: *mut usize,
) -> WorpStatus {
    guard(|| {
        nonnull(s, "sketch")?;
        nonnull(out_ptr, "out_ptr")?;
        nonnull(out_len, "out_len")?;
        let bytes = (*s).0.to_bytes().into_boxed_slice();
        *out_len = bytes.len();
        *out_ptr = Box::into_raw(bytes).cast::<u8>();
        Ok(())
    })
}

/// # Safety
/// `bytes` must point to `len` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn worp_sketch_deserialize(bytes: *const u8, len: usize, out: *mut *mut WorpSketch) -> WorpStatus {
    guard(|| {
        nonnull(bytes, "bytes")?;
        nonnull(out, "out")?;
        let s = lift(RhhSketch::from_bytes(std::slice::from_raw_parts(bytes, len)))?;
        *out = Box::into_raw(Box::new(WorpSketch(s)));
        Ok(())
    })
}

/// # Safety
/// `ptr`/`len` must come from [`worp_sketch_serialize`], or `ptr` is null.
#[no_mangle]
pub unsafe extern "C" fn worp_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}

/// The per-key scaling draw `r_x` for key bytes `key[0..len]`.
///
/// # Safety
/// `key` must point to `len` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn worp_draw_r(key: *const u8, len: usize, seed: u64, dist: WorpRDist, out: *mut f64) -> WorpStatus {
    guard(|| {
        nonnull(out, "out")?;
        let k = key_from(key, len)?;
        *out = worp::draw_r(&k, seed, rdist(dist));
        Ok(())
    })
}

/// Monte Carlo calibration of `Ψ_{n,k,ρ}(δ)` and the collection constant `B`.
///
/// # Safety
/// `out_psi` and `out_b` must be writable.
#[no_mangle]
pub unsafe extern "C" fn worp_estimate_psi(
    n: usize,
    k: usize,
    rho: f64,
    delta: f64,
    trials: usize,
    seed: u64,
    out_psi: *mut f64,
    out_b: *mut usize,
) -> WorpStatus {
    guard(|| {
        nonnull(out_psi, "out_psi")?;
        nonnull(out_b, "out_b")?;
        let cal = lift(worp::estimate_psi(n, k, rho, delta, trials, seed))?;
        *out_psi = cal.psi;
        *out_b = cal.b;
        Ok(())
    })
}

/// Draws a size-`k` WORp sample from an element file (`key,value` per
/// line). `passes` is 1 or 2; `psi` and `b` come from calibration at
/// `(n, k+1, q/p)`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn worp_sample_file(
    path: *const c_char,
    passes: u8,
    flavor_: WorpFlavor,
    k: usize,
    p: f64,
    psi: f64,
    b: usize,
    n: u64,
    seed: u64,
    out: *mut *mut WorpSample,
) -> WorpStatus {
    guard(|| {
        nonnull(out, "out")?;
        let path = c_str(path, "path")?;
        let src = ElementFile::new(path);
        let cfg = WorpConfig::new(k, p, flavor(flavor_), psi, b, n, seed);
        let s = match passes {
            1 => lift(worp::one_pass_sample(&src, &cfg))?,
            2 => lift(worp::two_pass_sample(&src, &cfg))?,
            _ => return Err(fail(WorpStatus::InvalidArgument, format!("passes must be 1 or 2, got {passes}"))),
        };
        *out = Box::into_raw(Box::new(WorpSample(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn worp_sample_free(s: *mut WorpSample) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn worp_sample_len(s: *const WorpSample) -> usize {
    if s.is_null() {
        return 0;
    }
    (*s).0.len()
}

/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn worp_sample_tau(s: *const WorpSample) -> f64 {
    if s.is_null() {
        return f64::NAN;
    }
    (*s).0.tau
}

/// Reads entry `i`. The key pointer borrows from the sample and stays valid
/// until the sample is freed.
///
/// # Safety
/// `s` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn worp_sample_entry(
    s: *const WorpSample,
    i: usize,
    key_ptr: *mut *const u8,
    key_len: *mut usize,
    frequency: *mut f64,
) -> WorpStatus {
    guard(|| {
        nonnull(s, "sample")?;
        nonnull(key_ptr, "key_ptr")?;
        nonnull(key_len, "key_len")?;
        nonnull(frequency, "frequency")?;
        let sample = &*s;
        let e = sample.0.entries.get(i).ok_or_else(|| fail(WorpStatus::InvalidArgument, format!("entry {i} out of range")))?;
        *key_ptr = e.key.as_bytes().as_ptr();
        *key_len = e.key.as_bytes().len();
        *frequency = e.frequency;
        Ok(())
    })
}

/// Inverse-probability estimate of `Σ f(ν_x)`, with `stat` either `sum` or
/// `p<e>` for `|ν|^e`.
///
/// # Safety
/// `s` must be a live handle, `stat` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn worp_sample_estimate(s: *const WorpSample, stat: *const c_char, out: *mut f64) -> WorpStatus {
    guard(|| {
        nonnull(s, "sample")?;
        nonnull(out, "out")?;
        let f = lift(FreqFn::parse(c_str(stat, "stat")?))?;
        *out = lift(estimate_statistic(&(*s).0, &StatisticSpec::new(f)))?.value;
        Ok(())
    })
}
