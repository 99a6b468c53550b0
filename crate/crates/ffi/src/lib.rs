//! C ABI over the readout chain model.
//!
//! Objects are opaque handles created and freed by this library. Every
//! fallible call returns an [`RtStatus`]; the message of the last failure on
//! the calling thread is available from [`rt_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use readout_twin::config::RunConfig;
use readout_twin::error::Error;
use readout_twin::export::export_results;
use readout_twin::periodicity::{predict_period, spur_frequency_prediction, StageDescriptor};
use readout_twin::pipeline::{run_closed_loop, RunResult};
use readout_twin::sample::Backend;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtBackend {
    Fixed = 0,
    Float = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStageKind {
    Accumulator = 0,
    QuarterRateShift = 1,
    Interpolate = 2,
    PhasorModulate = 3,
    Decimate = 4,
    BoxcarDecimate = 5,
}

/// One chain stage; `param` is ignored for the quarter-rate shift.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RtStage {
    pub kind: RtStageKind,
    pub param: u64,
}

/// Opaque run configuration.
pub struct RtConfig(RunConfig);

/// Opaque closed-loop result.
pub struct RtResult(RunResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> RtStatus {
    match e {
        _ if e.is_config() => RtStatus::Config,
        Error::Io { .. } => RtStatus::Io,
        _ => RtStatus::Numeric,
    }
}

fn fail(status: RtStatus, msg: impl Into<String>) -> RtStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RtStatus>) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RtStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(RtStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> RtStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, RtStatus> {
    if p.is_null() {
        return Err(fail(RtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, RtStatus> {
    p.as_ref().ok_or_else(|| fail(RtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, RtStatus> {
    p.as_mut().ok_or_else(|| fail(RtStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Single tone at 15.26 MHz in band 6; modulus also sets the DDC window.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rt_config_single_tone(modulus: u32, out: *mut *mut RtConfig) -> RtStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let cfg = RunConfig::single_tone(modulus);
        cfg.validate().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RtConfig(cfg)));
        Ok(())
    })
}

/// Parses a TOML run configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` as for
/// [`rt_config_single_tone`].
#[no_mangle]
pub unsafe extern "C" fn rt_config_from_toml(text: *const c_char, out: *mut *mut RtConfig) -> RtStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = mut_arg(out, "out")?;
        let cfg = RunConfig::from_toml_str(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RtConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rt_config_set_backend(cfg: *mut RtConfig, backend: RtBackend) -> RtStatus {
    guard(|| {
        mut_arg(cfg, "cfg")?.0.backend = match backend {
            RtBackend::Fixed => Backend::Fixed,
            RtBackend::Float => Backend::Float,
        };
        Ok(())
    })
}

/// Sets the number of DDC outputs per tone.
///
/// # Safety
/// `cfg` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rt_config_set_duration(cfg: *mut RtConfig, duration: usize) -> RtStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.duration = duration;
        next.validate().map_err(lib_err)?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rt_config_set_ddc_window(cfg: *mut RtConfig, window: u32) -> RtStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.ddc_window = window;
        next.validate().map_err(lib_err)?;
        cfg.0 = next;
        Ok(())
    })
}

/// Sets the Welch segment length of the noise PSDs.
///
/// # Safety
/// `cfg` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rt_config_set_psd_segment(cfg: *mut RtConfig, seg_len: usize) -> RtStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.psd.seg_len = seg_len;
        next.validate().map_err(lib_err)?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_config_free(cfg: *mut RtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the closed loop.
///
/// # Safety
/// `cfg` must be a handle from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_run_closed_loop(cfg: *const RtConfig, out: *mut *mut RtResult) -> RtStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = mut_arg(out, "out")?;
        let result = run_closed_loop(&cfg.0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RtResult(result)));
        Ok(())
    })
}

/// # Safety
/// `res` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_result_free(res: *mut RtResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `res` must be a handle from this library; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_result_tone_count(res: *const RtResult, count: *mut usize) -> RtStatus {
    guard(|| {
        *mut_arg(count, "count")? = ref_arg(res, "res")?.0.tones.len();
        Ok(())
    })
}

fn tone_of(res: &RtResult, tone: usize) -> Result<&readout_twin::pipeline::ToneResult, RtStatus> {
    res.0
        .tones
        .get(tone)
        .ok_or_else(|| fail(RtStatus::InvalidArgument, format!("tone {tone} out of range")))
}

/// Number of DDC output samples of a tone and their rate in Hz.
///
/// # Safety
/// `res` must be a handle from this library; `len` and `rate` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rt_result_ddc_info(res: *const RtResult, tone: usize, len: *mut usize, rate: *mut f64) -> RtStatus {
    guard(|| {
        let t = tone_of(ref_arg(res, "res")?, tone)?;
        *mut_arg(len, "len")? = t.ddc.len();
        *mut_arg(rate, "rate")? = t.ddc.sample_rate;
        Ok(())
    })
}

/// Copies a tone's DDC output into `i` and `q`, each of capacity `cap`.
///
/// # Safety
/// `i` and `q` must point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rt_result_ddc_copy(res: *const RtResult, tone: usize, i: *mut f64, q: *mut f64, cap: usize) -> RtStatus {
    guard(|| {
        let t = tone_of(ref_arg(res, "res")?, tone)?;
        if i.is_null() || q.is_null() {
            return Err(fail(RtStatus::NullPointer, "output buffer is null"));
        }
        let z = t.ddc.to_complex64();
        if cap < z.len() {
            return Err(fail(RtStatus::BufferTooSmall, format!("need {} samples, have {cap}", z.len())));
        }
        let (i, q) = (std::slice::from_raw_parts_mut(i, z.len()), std::slice::from_raw_parts_mut(q, z.len()));
        for (k, s) in z.iter().enumerate() {
            i[k] = s.re;
            q[k] = s.im;
        }
        Ok(())
    })
}

/// Spurs detected in a tone's amplitude PSD, strongest first. Writes up to
/// `cap` frequency/prominence pairs and the total count to `count`.
///
/// # Safety
/// `freq` and `prominence_db` must point to `cap` writable doubles (may be
/// null when `cap` is 0); `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_result_amp_spurs(
    res: *const RtResult,
    tone: usize,
    freq: *mut f64,
    prominence_db: *mut f64,
    cap: usize,
    count: *mut usize,
) -> RtStatus {
    guard(|| {
        let spurs = &tone_of(ref_arg(res, "res")?, tone)?.amp_psd.detected_spurs;
        *mut_arg(count, "count")? = spurs.len();
        let n = spurs.len().min(cap);
        if n > 0 {
            if freq.is_null() || prominence_db.is_null() {
                return Err(fail(RtStatus::NullPointer, "output buffer is null"));
            }
            for (k, s) in spurs[..n].iter().enumerate() {
                *freq.add(k) = s.freq;
                *prominence_db.add(k) = s.prominence_db;
            }
        }
        Ok(())
    })
}

/// Writes CSVs and the manifest into `dir`.
///
/// # Safety
/// `res` must be a handle from this library; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn rt_result_export(res: *const RtResult, dir: *const c_char) -> RtStatus {
    guard(|| {
        let res = ref_arg(res, "res")?;
        let dir = str_arg(dir, "dir")?;
        export_results(&res.0, Path::new(dir)).map_err(lib_err)?;
        Ok(())
    })
}

/// Period after a chain of `n` stages.
///
/// # Safety
/// `stages` must point to `n` stages; `period` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_predict_period(stages: *const RtStage, n: usize, period: *mut u64) -> RtStatus {
    guard(|| {
        if stages.is_null() && n > 0 {
            return Err(fail(RtStatus::NullPointer, "stages is null"));
        }
        let out = mut_arg(period, "period")?;
        let chain: Vec<StageDescriptor> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(stages, n)
                .iter()
                .map(|s| match s.kind {
                    RtStageKind::Accumulator => StageDescriptor::Accumulator(s.param),
                    RtStageKind::QuarterRateShift => StageDescriptor::QuarterRateShift,
                    RtStageKind::Interpolate => StageDescriptor::Interpolate(s.param),
                    RtStageKind::PhasorModulate => StageDescriptor::PhasorModulate(s.param),
                    RtStageKind::Decimate => StageDescriptor::Decimate(s.param),
                    RtStageKind::BoxcarDecimate => StageDescriptor::BoxcarDecimate(s.param),
                })
                .collect()
        };
        *out = predict_period(&chain).map_err(lib_err)?.period();
        Ok(())
    })
}

/// Predicted DDC spur lines in Hz. Writes up to `cap` lines and the total
/// count to `count`.
///
/// # Safety
/// `lines` must point to `cap` writable doubles (may be null when `cap` is
/// 0); `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_spur_frequency_prediction(
    modulus: u64,
    window_len: u64,
    phasor_period: u64,
    interp: u64,
    rate: f64,
    lines: *mut f64,
    cap: usize,
    count: *mut usize,
) -> RtStatus {
    guard(|| {
        if modulus == 0 || window_len == 0 || phasor_period == 0 || interp == 0 || rate.is_nan() || rate <= 0.0 {
            return Err(fail(RtStatus::InvalidArgument, "parameters must be positive"));
        }
        let found = spur_frequency_prediction(modulus, window_len, phasor_period, interp, rate);
        *mut_arg(count, "count")? = found.len();
        let n = found.len().min(cap);
        if n > 0 {
            if lines.is_null() {
                return Err(fail(RtStatus::NullPointer, "lines is null"));
            }
            std::slice::from_raw_parts_mut(lines, n).copy_from_slice(&found[..n]);
        }
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
