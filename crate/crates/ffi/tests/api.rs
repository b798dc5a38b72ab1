use std::ffi::{CStr, CString};
use std::ptr;

use revisit_core::synth::scenes::{build_location, LocationKind};
use revisit_ffi::*;

fn c(s: &std::path::Path) -> CString {
    CString::new(s.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = revisit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(revisit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_and_bad_arguments_map_to_codes() {
    let mut report = RevisitEvalSummary::default();
    let status = unsafe { revisit_evaluate(ptr::null(), ptr::null(), &mut report) };
    assert_eq!(status, RevisitStatus::NullArgument);
    assert!(last_error().contains("predictions"));

    let bad = [0xffu8, 0xfe, 0];
    let status = unsafe { revisit_generate(1, bad.as_ptr().cast()) };
    assert_eq!(status, RevisitStatus::InvalidUtf8);

    let missing = CString::new("/definitely/not/here").unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { revisit_store_open(missing.as_ptr(), &mut handle) };
    assert_ne!(status, RevisitStatus::Ok);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    // A successful call clears the message.
    let point = [0.0, 0.0, 2.0];
    let pose = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let mut phrase = RevisitSpatialPhrase::default();
    assert_eq!(unsafe { revisit_spatial_phrase(point.as_ptr(), pose.as_ptr(), &mut phrase) }, RevisitStatus::Ok);
    assert!(revisit_last_error().is_null());
    assert_eq!(phrase.clock, 12);
    assert!((phrase.distance_feet - 2.0 * 3.28084).abs() < 1e-9);

    let skewed = [2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let status = unsafe { revisit_spatial_phrase(point.as_ptr(), skewed.as_ptr(), &mut phrase) };
    assert_ne!(status, RevisitStatus::Ok);
}

#[test]
fn replay_open_and_ask() {
    let dir = tempfile::tempdir().unwrap();
    let location = dir.path().join("office");
    let store = dir.path().join("store");
    let mut script = build_location(LocationKind::Office, 11);
    script.visits.truncate(3);
    script.write_location(&location).unwrap();

    let mut summary = RevisitReplaySummary::default();
    let status = unsafe { revisit_replay(c(&location).as_ptr(), c(&store).as_ptr(), &mut summary) };
    assert_eq!(status, RevisitStatus::Ok, "{}", last_error());
    assert_eq!(summary.visits, 3);
    assert!(summary.events > 0 && summary.predictions > 0);

    let mut report = RevisitEvalSummary::default();
    let pred = c(&store.join("pred.jsonl"));
    let gt = c(&location.join("gt.jsonl"));
    assert_eq!(unsafe { revisit_evaluate(pred.as_ptr(), gt.as_ptr(), &mut report) }, RevisitStatus::Ok);
    assert!(report.true_positives > 0);
    assert!(report.recall >= 0.95, "{report:?}");

    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { revisit_store_open(c(&store).as_ptr(), &mut handle) }, RevisitStatus::Ok);
    let mut count = 0usize;
    assert_eq!(unsafe { revisit_store_visit_count(handle, &mut count) }, RevisitStatus::Ok);
    assert_eq!(count, 3);

    for q in ["scene", "changes --limit 2", "where chair"] {
        let query = CString::new(q).unwrap();
        let mut text = ptr::null_mut();
        assert_eq!(unsafe { revisit_store_ask(handle, query.as_ptr(), &mut text) }, RevisitStatus::Ok);
        assert!(!unsafe { CStr::from_ptr(text) }.to_bytes().is_empty());
        unsafe { revisit_string_free(text) };
    }
    let query = CString::new("dance").unwrap();
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { revisit_store_ask(handle, query.as_ptr(), &mut text) }, RevisitStatus::Usage);
    assert!(text.is_null());
    unsafe { revisit_store_free(handle) };
}
