//! C ABI over `pandora-core`.
//!
//! Instances live behind an opaque [`PandoraInstance`] handle. Every call
//! returns a [`PandoraStatus`]; on failure the message is available from
//! [`pandora_last_error_message`] on the same thread. Strings handed out by
//! the library must be released with [`pandora_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pandora_core::engine::{exact_expected_utility, optimal_adaptive_oracle, OracleGuards};
use pandora_core::error::Error;
use pandora_core::indices::reservation_value;
use pandora_core::io::instance_from_json;
use pandora_core::pipeline::{build_strategy, run_pipeline, PipelineConfig};
use pandora_core::rational::to_f64;
use pandora_core::strategies::StrategyKind;
use pandora_core::submodular::SolverConfig;
use pandora_core::Instance;

/// Opaque instance handle.
pub struct PandoraInstance {
    inner: Instance,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PandoraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Capacity = 5,
    Precondition = 6,
    Internal = 7,
    Panic = 8,
    OutOfRange = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PandoraStrategy {
    Main = 0,
    Instant = 1,
    Fixed = 2,
    FixedHeuristic = 3,
    Weitzman = 4,
}

impl From<PandoraStrategy> for StrategyKind {
    fn from(s: PandoraStrategy) -> Self {
        match s {
            PandoraStrategy::Main => StrategyKind::Main,
            PandoraStrategy::Instant => StrategyKind::Instant,
            PandoraStrategy::Fixed => StrategyKind::Fixed,
            PandoraStrategy::FixedHeuristic => StrategyKind::FixedHeuristic,
            PandoraStrategy::Weitzman => StrategyKind::Weitzman,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> PandoraStatus {
    match err.root() {
        Error::Structural(_) | Error::Json(_) => PandoraStatus::Parse,
        Error::Validation(_) => PandoraStatus::Validation,
        Error::Capacity { .. } => PandoraStatus::Capacity,
        Error::Precondition(_) => PandoraStatus::Precondition,
        _ => PandoraStatus::Internal,
    }
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guarded(body: impl FnOnce() -> Result<(), PandoraStatus>) -> PandoraStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PandoraStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("panic inside pandora library");
            PandoraStatus::Panic
        }
    }
}

fn fail(err: Error) -> PandoraStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null(what: &str) -> PandoraStatus {
    set_error(&format!("{what} is null"));
    PandoraStatus::NullPointer
}

unsafe fn instance_ref<'a>(handle: *const PandoraInstance) -> Result<&'a Instance, PandoraStatus> {
    handle.as_ref().map(|h| &h.inner).ok_or_else(|| null("instance handle"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), PandoraStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Parses a `pandora-time/1` JSON document and validates it.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pandora_instance_from_json(json: *const c_char, out: *mut *mut PandoraInstance) -> PandoraStatus {
    guarded(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| {
            set_error("json is not valid UTF-8");
            PandoraStatus::InvalidUtf8
        })?;
        let inner = instance_from_json(text).map_err(fail)?;
        inner.ensure_valid().map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(PandoraInstance { inner })))
    })
}

/// Releases an instance. Null is ignored.
///
/// # Safety
/// `handle` must come from [`pandora_instance_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pandora_instance_free(handle: *mut PandoraInstance) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live instance and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pandora_instance_box_count(handle: *const PandoraInstance, out: *mut usize) -> PandoraStatus {
    guarded(|| write_out(out, instance_ref(handle)?.n()))
}

/// # Safety
/// `handle` must be a live instance and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pandora_instance_horizon(handle: *const PandoraInstance, out: *mut usize) -> PandoraStatus {
    guarded(|| write_out(out, instance_ref(handle)?.horizon))
}

/// Reservation value of box `box_idx` (0-based) at round `time` (1-based).
/// Fails with `OutOfRange` when the box cannot be inspected at that round.
///
/// # Safety
/// `handle` must be a live instance and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pandora_reservation_value(
    handle: *const PandoraInstance,
    box_idx: usize,
    time: usize,
    out: *mut f64,
) -> PandoraStatus {
    guarded(|| {
        let inst = instance_ref(handle)?;
        let cost = inst
            .boxes
            .get(box_idx)
            .filter(|_| time >= 1 && time <= inst.horizon)
            .and_then(|b| b.cost_at(time).map(|c| (b, c)));
        let Some((b, c)) = cost else {
            set_error(&format!("box {box_idx} cannot be inspected at round {time}"));
            return Err(PandoraStatus::OutOfRange);
        };
        write_out(out, to_f64(&reservation_value(b.reward_at(time), c)))
    })
}

/// Exact expected utility of a strategy.
///
/// # Safety
/// `handle` must be a live instance and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pandora_exact_utility(
    handle: *const PandoraInstance,
    strategy: PandoraStrategy,
    seed: u64,
    out: *mut f64,
) -> PandoraStatus {
    guarded(|| {
        let inst = instance_ref(handle)?;
        let s = build_strategy(inst, strategy.into(), &SolverConfig::default(), seed).map_err(fail)?;
        let v = exact_expected_utility(inst, s.as_ref()).map_err(fail)?;
        write_out(out, to_f64(&v))
    })
}

/// Optimal adaptive value under the default size guards.
///
/// # Safety
/// `handle` must be a live instance and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pandora_oracle_value(handle: *const PandoraInstance, out: *mut f64) -> PandoraStatus {
    guarded(|| {
        let inst = instance_ref(handle)?;
        let res = optimal_adaptive_oracle(inst, &OracleGuards::default()).map_err(fail)?;
        write_out(out, to_f64(&res.optimal_value))
    })
}

/// Full pipeline report as a JSON string, to be freed with [`pandora_string_free`].
///
/// # Safety
/// `handle` must be a live instance and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pandora_pipeline_json(
    handle: *const PandoraInstance,
    seed: u64,
    with_oracle: bool,
    out_json: *mut *mut c_char,
) -> PandoraStatus {
    guarded(|| {
        let inst = instance_ref(handle)?;
        let cfg = PipelineConfig { seed, with_oracle, ..PipelineConfig::default() };
        let report = run_pipeline(inst, &cfg).map_err(fail)?;
        let text = serde_json::to_string(&report).map_err(|e| fail(e.into()))?;
        let c = CString::new(text).map_err(|_| {
            set_error("report contains a NUL byte");
            PandoraStatus::Internal
        })?;
        write_out(out_json, c.into_raw())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pandora_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn pandora_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pandora_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
