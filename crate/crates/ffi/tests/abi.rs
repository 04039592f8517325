use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use glrank::ranker::{RankerConfig, RankerModel};
use glrank_ffi::*;

const CORPUS: &str = r#"{"id":"a","title":"apple pie","abstract":"apple pie with cinnamon"}
{"id":"b","title":"apple tart","abstract":"apple tart with cream"}
{"id":"c","title":"engine oil","abstract":"engine oil change"}
{"id":"d","title":"engine repair","abstract":"engine repair and oil"}
"#;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = glr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn open(dir: &tempfile::TempDir) -> *mut GlrIndex {
    let path = dir.path().join("corpus.jsonl");
    fs::write(&path, CORPUS).unwrap();
    let path = cstr(path.to_str().unwrap());
    let mut idx = ptr::null_mut();
    let st = unsafe { glr_index_open(path.as_ptr(), ptr::null(), &mut idx) };
    assert_eq!(st, GlrStatus::GLR_OK);
    assert!(!idx.is_null());
    idx
}

#[test]
fn retrieval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let idx = open(&dir);
    unsafe {
        assert_eq!(glr_index_len(idx), 4);
        let q = cstr("a");
        let mut r = ptr::null_mut();
        assert_eq!(glr_retrieve(idx, q.as_ptr(), 2, &mut r), GlrStatus::GLR_OK);
        assert_eq!(glr_ranking_len(r), 2);
        let top = CStr::from_ptr(glr_ranking_id(r, 0)).to_str().unwrap();
        assert_eq!(top, "b");
        assert!(glr_ranking_score(r, 0) >= glr_ranking_score(r, 1));
        assert!(glr_ranking_id(r, 2).is_null());
        assert!(glr_ranking_score(r, 2).is_nan());
        glr_ranking_free(r);
        glr_index_free(idx);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let idx = open(&dir);
    unsafe {
        let mut r = ptr::null_mut();
        let q = cstr("zzz");
        assert_eq!(glr_retrieve(idx, q.as_ptr(), 2, &mut r), GlrStatus::GLR_VALIDATION);
        assert!(r.is_null());
        assert!(last_error().contains("zzz"));

        assert_eq!(glr_retrieve(idx, ptr::null(), 2, &mut r), GlrStatus::GLR_NULL_ARGUMENT);
        assert!(last_error().contains("doc_id"));

        let bad = [0xffu8, 0];
        assert_eq!(glr_retrieve(idx, bad.as_ptr().cast(), 2, &mut r), GlrStatus::GLR_INVALID_UTF8);

        let missing = cstr("/nonexistent/corpus.jsonl");
        let mut other = ptr::null_mut();
        assert_eq!(glr_index_open(missing.as_ptr(), ptr::null(), &mut other), GlrStatus::GLR_IO);
        assert!(other.is_null());

        // freeing null is a no-op
        glr_index_free(ptr::null_mut());
        glr_ranking_free(ptr::null_mut());
        glr_model_free(ptr::null_mut());
        glr_index_free(idx);
    }
}

#[test]
fn tokenize_reports_needed_length() {
    let dir = tempfile::tempdir().unwrap();
    let idx = open(&dir);
    unsafe {
        let text = cstr("apple engine oil");
        let mut n = 0usize;
        assert_eq!(glr_tokenize(idx, text.as_ptr(), ptr::null_mut(), 0, &mut n), GlrStatus::GLR_BUFFER_TOO_SMALL);
        assert!(n >= 3);
        let mut buf = vec![0u32; n];
        assert_eq!(glr_tokenize(idx, text.as_ptr(), buf.as_mut_ptr(), n, &mut n), GlrStatus::GLR_OK);
        assert!(buf.iter().all(|&t| (t as usize) < glr_index_vocab_size(idx)));
        glr_index_free(idx);
    }
}

#[test]
fn model_scores_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = RankerModel::new(RankerConfig::toy(30)).unwrap();
    let path = dir.path().join("m.glrk");
    model.save(&path).unwrap();
    let query = [5u32, 6, 7];
    let docs: [&[u32]; 2] = [&[8, 9, 10], &[11, 12]];
    let want = model.score(&model.pack(&query, &docs).unwrap()).unwrap();

    let cpath = cstr(path.to_str().unwrap());
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(glr_model_load(cpath.as_ptr(), &mut m), GlrStatus::GLR_OK);
        let flat = [8u32, 9, 10, 11, 12];
        let lens = [3usize, 2];
        let mut got = [0.0f64; 2];
        let st = glr_model_score(m, query.as_ptr(), 3, flat.as_ptr(), lens.as_ptr(), 2, got.as_mut_ptr());
        assert_eq!(st, GlrStatus::GLR_OK);
        assert_eq!(got.to_vec(), want);

        let oov = [99u32];
        let st = glr_model_score(m, oov.as_ptr(), 1, flat.as_ptr(), lens.as_ptr(), 2, got.as_mut_ptr());
        assert_eq!(st, GlrStatus::GLR_VALIDATION);
        glr_model_free(m);
    }
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(glr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/glrank.h")).unwrap();
    for sym in [
        "GLRANK_H",
        "typedef struct GlrIndex GlrIndex;",
        "typedef struct GlrModel GlrModel;",
        "typedef struct GlrRanking GlrRanking;",
        "GLR_OK = 0",
        "GLR_PANIC",
        "glr_index_open",
        "glr_retrieve",
        "glr_model_score",
        "glr_last_error",
        "glr_selfcheck",
    ] {
        assert!(header.contains(sym), "header lacks `{sym}`");
    }
}
