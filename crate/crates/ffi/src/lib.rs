//! C ABI over the glrank engine.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_open` or `*_load` function and released by the matching `*_free`.
//! Functions return a [`GlrStatus`]; on failure the message is available from
//! [`glr_last_error`] on the same thread until the next failing call.
//! Panics are caught at the boundary and reported as `GLR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use glrank::corpus::{CorpusStore, TokenId, Vocabulary};
use glrank::ranker::RankerModel;
use glrank::retriever::{retrieve_candidates, FusedPool, InvertedIndex, RetrieverConfig, TokenTable};
use glrank::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlrStatus {
    GLR_OK = 0,
    /// a required pointer argument was null
    GLR_NULL_ARGUMENT = 1,
    /// a string argument was not valid UTF-8
    GLR_INVALID_UTF8 = 2,
    /// inputs were rejected; see `glr_last_error`
    GLR_VALIDATION = 3,
    /// a file could not be read or written
    GLR_IO = 4,
    /// any other engine failure
    GLR_RUNTIME = 5,
    /// the caller's buffer is too small; the needed length was written
    GLR_BUFFER_TOO_SMALL = 6,
    GLR_PANIC = 7,
}

/// Indexed corpus with its vocabulary and fused retrieval pool.
pub struct GlrIndex {
    vocab: Arc<Vocabulary>,
    index: InvertedIndex,
    pool: FusedPool,
    cfg: RetrieverConfig,
}

/// Ranked retrieval result.
pub struct GlrRanking {
    ids: Vec<CString>,
    scores: Vec<f64>,
}

/// Loaded ranker checkpoint.
pub struct GlrModel {
    model: RankerModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> GlrStatus {
    match err {
        Error::Io { .. } => GlrStatus::GLR_IO,
        e if e.is_validation() => GlrStatus::GLR_VALIDATION,
        _ => GlrStatus::GLR_RUNTIME,
    }
}

/// Runs `f` behind the panic guard, recording any error message.
fn guard(f: impl FnOnce() -> Result<(), (GlrStatus, String)>) -> GlrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlrStatus::GLR_OK,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GlrStatus::GLR_PANIC
        }
    }
}

fn engine(err: Error) -> (GlrStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (GlrStatus, String) {
    (GlrStatus::GLR_NULL_ARGUMENT, format!("`{name}` is null"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, (GlrStatus, String)> {
    if s.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (GlrStatus::GLR_INVALID_UTF8, format!("`{name}` is not valid UTF-8")))
}

/// Message of the last failing call on this thread, or null. Owned by the
/// library and valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn glr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Indexes a JSON-lines corpus. `vocab_path` may be null, in which case the
/// vocabulary is built from the corpus words. `k` is the default number of
/// documents returned by [`glr_retrieve`].
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn glr_index_open(
    corpus_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut GlrIndex,
) -> GlrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let corpus = CorpusStore::load(Path::new(str_arg(corpus_path, "corpus_path")?)).map_err(engine)?;
        let vocab = if vocab_path.is_null() {
            glrank::cli::vocabulary_from_corpus(&corpus)
        } else {
            Vocabulary::load(Path::new(str_arg(vocab_path, "vocab_path")?))
        }
        .map_err(engine)?;
        let cfg = RetrieverConfig::default();
        let index = InvertedIndex::build(&corpus, &vocab).map_err(engine)?;
        let table = TokenTable::random(vocab.len(), cfg.embedding_dim, cfg.embedding_seed);
        let pool = FusedPool::build(&index, &table, &cfg);
        *out = Box::into_raw(Box::new(GlrIndex {
            vocab: Arc::new(vocab),
            index,
            pool,
            cfg,
        }));
        Ok(())
    })
}

/// # Safety
/// `idx` must be null or a handle from [`glr_index_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glr_index_free(idx: *mut GlrIndex) {
    if !idx.is_null() {
        drop(Box::from_raw(idx));
    }
}

/// Number of indexed documents; 0 for a null handle.
///
/// # Safety
/// `idx` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glr_index_len(idx: *const GlrIndex) -> usize {
    idx.as_ref().map_or(0, |i| i.index.n_docs())
}

/// Vocabulary size, including the special tokens; 0 for a null handle.
///
/// # Safety
/// `idx` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glr_index_vocab_size(idx: *const GlrIndex) -> usize {
    idx.as_ref().map_or(0, |i| i.vocab.len())
}

/// Tokenizes `text` into `ids`. `out_len` receives the token count even
/// when it exceeds `cap`, in which case `GLR_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `ids` must be valid for `cap` writes (it may be null when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn glr_tokenize(
    idx: *const GlrIndex,
    text: *const c_char,
    ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> GlrStatus {
    guard(|| {
        let idx = idx.as_ref().ok_or_else(|| null("idx"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let toks = idx.vocab.tokenize(str_arg(text, "text")?);
        *out_len = toks.len();
        if toks.len() > cap {
            return Err((
                GlrStatus::GLR_BUFFER_TOO_SMALL,
                format!("{} tokens do not fit in {cap}", toks.len()),
            ));
        }
        if !toks.is_empty() {
            if ids.is_null() {
                return Err(null("ids"));
            }
            std::slice::from_raw_parts_mut(ids, toks.len()).copy_from_slice(&toks);
        }
        Ok(())
    })
}

/// Fused retrieval with document `doc_id` as the query, excluding itself.
/// `k` of 0 uses the index default.
///
/// # Safety
/// `idx` must be a live handle, `doc_id` NUL-terminated and `out` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn glr_retrieve(
    idx: *const GlrIndex,
    doc_id: *const c_char,
    k: usize,
    out: *mut *mut GlrRanking,
) -> GlrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let idx = idx.as_ref().ok_or_else(|| null("idx"))?;
        let id = str_arg(doc_id, "doc_id")?;
        let rep = idx.pool.get(id).ok_or_else(|| {
            engine(Error::Unknown {
                kind: "document",
                id: id.to_string(),
            })
        })?;
        let k = if k == 0 { idx.cfg.k } else { k };
        let ranked = retrieve_candidates(rep, &idx.pool, k, Some(id), idx.cfg.alpha);
        let ids = ranked
            .iter()
            .map(|c| CString::new(c.id.as_str()).map_err(|_| (GlrStatus::GLR_RUNTIME, "id contains NUL".to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(GlrRanking {
            ids,
            scores: ranked.iter().map(|c| c.score).collect(),
        }));
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a live ranking handle.
#[no_mangle]
pub unsafe extern "C" fn glr_ranking_len(r: *const GlrRanking) -> usize {
    r.as_ref().map_or(0, |r| r.ids.len())
}

/// Document id at `i`, or null when out of range. Valid while `r` lives.
///
/// # Safety
/// `r` must be null or a live ranking handle.
#[no_mangle]
pub unsafe extern "C" fn glr_ranking_id(r: *const GlrRanking, i: usize) -> *const c_char {
    r.as_ref()
        .and_then(|r| r.ids.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Score at `i`, or NaN when out of range.
///
/// # Safety
/// `r` must be null or a live ranking handle.
#[no_mangle]
pub unsafe extern "C" fn glr_ranking_score(r: *const GlrRanking, i: usize) -> f64 {
    r.as_ref().and_then(|r| r.scores.get(i).copied()).unwrap_or(f64::NAN)
}

/// # Safety
/// `r` must be null or a handle from [`glr_retrieve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glr_ranking_free(r: *mut GlrRanking) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Loads a ranker checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glr_model_load(path: *const c_char, out: *mut *mut GlrModel) -> GlrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = RankerModel::load(Path::new(str_arg(path, "path")?)).map_err(engine)?;
        *out = Box::into_raw(Box::new(GlrModel { model }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`glr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn glr_model_free(m: *mut GlrModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Scores `k` candidate documents against a query, writing `k` relevance
/// likelihoods to `scores`. Candidate tokens are concatenated in `docs`;
/// `doc_lens[i]` is the length of candidate `i`.
///
/// # Safety
/// `query` must hold `query_len` ids, `doc_lens` and `scores` `k` entries,
/// and `docs` the sum of `doc_lens`.
#[no_mangle]
pub unsafe extern "C" fn glr_model_score(
    m: *const GlrModel,
    query: *const u32,
    query_len: usize,
    docs: *const u32,
    doc_lens: *const usize,
    k: usize,
    scores: *mut f64,
) -> GlrStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("m"))?;
        for (p, name) in [
            (query.is_null(), "query"),
            (doc_lens.is_null(), "doc_lens"),
            (scores.is_null(), "scores"),
        ] {
            if p {
                return Err(null(name));
            }
        }
        let q: &[TokenId] = std::slice::from_raw_parts(query, query_len);
        let lens = std::slice::from_raw_parts(doc_lens, k);
        let total: usize = lens.iter().sum();
        if total > 0 && docs.is_null() {
            return Err(null("docs"));
        }
        let flat: &[TokenId] = if total == 0 { &[] } else { std::slice::from_raw_parts(docs, total) };
        let mut cands: Vec<&[TokenId]> = Vec::with_capacity(k);
        let mut at = 0;
        for &len in lens {
            cands.push(&flat[at..at + len]);
            at += len;
        }
        let vocab = m.model.cfg.vocab_size as TokenId;
        if let Some(bad) = q.iter().chain(flat).find(|&&t| t >= vocab) {
            return Err((
                GlrStatus::GLR_VALIDATION,
                format!("token id {bad} outside the vocabulary ({vocab})"),
            ));
        }
        let packed = m.model.pack(q, &cands).map_err(engine)?;
        let out = m.model.score(&packed).map_err(engine)?;
        std::slice::from_raw_parts_mut(scores, k).copy_from_slice(&out);
        Ok(())
    })
}

/// Runs the built-in oracle suite; `passed` receives the number of passing
/// checks out of four.
///
/// # Safety
/// `passed` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn glr_selfcheck(passed: *mut u32) -> GlrStatus {
    guard(|| {
        if passed.is_null() {
            return Err(null("passed"));
        }
        let outcomes = glrank::selfcheck::run_all().map_err(engine)?;
        *passed = outcomes.iter().filter(|o| o.passed).count() as u32;
        Ok(())
    })
}
