//! C interface to the revisit engine.
//!
//! Every function returns a [`RevisitStatus`]. On failure a message for the
//! calling thread is available from [`revisit_last_error`]. Strings handed
//! out by the library must be released with [`revisit_string_free`]; store
//! handles with [`revisit_store_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use revisit_core::config::Config;
use revisit_core::eval::{evaluate_files, Tolerances};
use revisit_core::geometry::{spatial_phrase, Pose};
use revisit_core::qa::{answer, parse_query, Query, Tools};
use revisit_core::session::{replay, DetectorChoice, Engine, ReplayOptions};
use revisit_core::synth::scenes::standard_benchmark;
use revisit_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevisitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Usage = 3,
    Io = 4,
    Format = 5,
    Detector = 6,
    Provider = 7,
    Panic = 8,
}

/// Open store: its episodic and object memories plus configuration.
pub struct RevisitStore {
    engine: Engine,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RevisitReplaySummary {
    pub visits: usize,
    pub frames: usize,
    pub events: usize,
    pub narrations: usize,
    pub predictions: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RevisitEvalSummary {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub repetitive: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub clock_error_mean: f64,
    pub distance_error_mean: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RevisitSpatialPhrase {
    /// 1 to 12.
    pub clock: u8,
    pub distance_feet: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RevisitStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RevisitStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            RevisitStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            RevisitStatus::InvalidUtf8
        }
        Ok(Err(Failure::Core(e))) => {
            let status = match &e {
                Error::Usage(_) => RevisitStatus::Usage,
                Error::Io { .. } => RevisitStatus::Io,
                Error::Format { .. } | Error::Json(_) => RevisitStatus::Format,
                Error::Detector(_) => RevisitStatus::Detector,
                Error::Provider(_) => RevisitStatus::Provider,
            };
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".to_owned());
            RevisitStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or(Failure::Null(what))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn revisit_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn revisit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn revisit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the synthetic three-location benchmark under `out_dir`.
///
/// # Safety
/// `out_dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn revisit_generate(seed: u64, out_dir: *const c_char) -> RevisitStatus {
    guard(|| {
        let root = PathBuf::from(text(out_dir, "out_dir")?);
        for script in standard_benchmark(seed) {
            script.write_location(&root.join(&script.location_id))?;
        }
        Ok(())
    })
}

/// Replays a generated location into `store` with the oracle detector.
///
/// # Safety
/// Paths must be NUL-terminated strings; `summary` may be null.
#[no_mangle]
pub unsafe extern "C" fn revisit_replay(
    location: *const c_char,
    store: *const c_char,
    summary: *mut RevisitReplaySummary,
) -> RevisitStatus {
    guard(|| {
        let location = PathBuf::from(text(location, "location")?);
        let store = PathBuf::from(text(store, "store")?);
        let options = ReplayOptions {
            detector: DetectorChoice::Oracle,
            live: false,
            echo: false,
        };
        let s = replay(&location, &store, Config::default(), &options)?;
        if let Some(slot) = summary.as_mut() {
            *slot = RevisitReplaySummary {
                visits: s.visits,
                frames: s.frames,
                events: s.events,
                narrations: s.narrations,
                predictions: s.predictions,
            };
        }
        Ok(())
    })
}

/// Scores a prediction file against ground truth with default tolerances.
///
/// # Safety
/// Paths must be NUL-terminated strings; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn revisit_evaluate(
    predictions: *const c_char,
    ground_truth: *const c_char,
    report: *mut RevisitEvalSummary,
) -> RevisitStatus {
    guard(|| {
        let pred = PathBuf::from(text(predictions, "predictions")?);
        let gt = PathBuf::from(text(ground_truth, "ground_truth")?);
        let slot = out(report, "report")?;
        let r = evaluate_files(&pred, &gt, &Tolerances::default())?;
        *slot = RevisitEvalSummary {
            true_positives: r.tp,
            false_positives: r.fp,
            false_negatives: r.fn_,
            repetitive: r.repetitive,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            clock_error_mean: r.clock_error_mean,
            distance_error_mean: r.distance_error_mean,
        };
        Ok(())
    })
}

/// Clock direction and range of a world point seen from a camera pose given
/// as a row-major 4x4 camera-to-world matrix.
///
/// # Safety
/// `point` must hold 3 doubles, `pose` 16, and `phrase` must be writable.
#[no_mangle]
pub unsafe extern "C" fn revisit_spatial_phrase(
    point: *const f64,
    pose: *const f64,
    phrase: *mut RevisitSpatialPhrase,
) -> RevisitStatus {
    guard(|| {
        if point.is_null() {
            return Err(Failure::Null("point"));
        }
        if pose.is_null() {
            return Err(Failure::Null("pose"));
        }
        let slot = out(phrase, "phrase")?;
        let p = std::slice::from_raw_parts(point, 3);
        let pose = Pose::from_row_major(std::slice::from_raw_parts(pose, 16))?;
        let s = spatial_phrase(&[p[0], p[1], p[2]].into(), &pose);
        *slot = RevisitSpatialPhrase {
            clock: s.clock,
            distance_feet: s.distance_feet,
        };
        Ok(())
    })
}

/// Opens a store written by a replay.
///
/// # Safety
/// `path` must be a NUL-terminated string and `handle` writable. On success
/// `*handle` owns the store until passed to [`revisit_store_free`].
#[no_mangle]
pub unsafe extern "C" fn revisit_store_open(path: *const c_char, handle: *mut *mut RevisitStore) -> RevisitStatus {
    guard(|| {
        let slot = out(handle, "handle")?;
        *slot = std::ptr::null_mut();
        let dir = PathBuf::from(text(path, "path")?);
        let engine = Engine::open(&dir, None)?;
        *slot = Box::into_raw(Box::new(RevisitStore { engine }));
        Ok(())
    })
}

/// Closes a store. Null is ignored.
///
/// # Safety
/// `handle` must come from [`revisit_store_open`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn revisit_store_free(handle: *mut RevisitStore) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of visits recorded in the store.
///
/// # Safety
/// `handle` must be a live store and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn revisit_store_visit_count(handle: *const RevisitStore, count: *mut usize) -> RevisitStatus {
    guard(|| {
        let store = handle.as_ref().ok_or(Failure::Null("handle"))?;
        *out(count, "count")? = store.engine.esm.visits().len();
        Ok(())
    })
}

/// Answers one query (`scene`, `changes [--since D] [--limit K]`,
/// `where LABEL`) as seen from the last recorded frame.
///
/// # Safety
/// `handle` must be a live store, `query` a NUL-terminated string and
/// `answer_text` writable. The returned string must be released with
/// [`revisit_string_free`].
#[no_mangle]
pub unsafe extern "C" fn revisit_store_ask(
    handle: *const RevisitStore,
    query: *const c_char,
    answer_text: *mut *mut c_char,
) -> RevisitStatus {
    guard(|| {
        let store = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let slot = out(answer_text, "answer_text")?;
        *slot = std::ptr::null_mut();
        let q = parse_query(text(query, "query")?)?;
        if matches!(q, Query::Quit) {
            return Err(Error::usage("quit is not a question").into());
        }
        let engine = &store.engine;
        let latest = engine.esm.recent_frames(1).first().map(|r| (r.frame.pose, r.ingest_time));
        let tools = Tools {
            esm: &engine.esm,
            otm: &engine.otm,
            pose: latest.map(|l| l.0),
        };
        let item = answer(&q, &tools, engine.config().qa_n, latest.map_or(0.0, |l| l.1))?;
        *slot = CString::new(item.text.replace('\0', " ")).unwrap_or_default().into_raw();
        Ok(())
    })
}
