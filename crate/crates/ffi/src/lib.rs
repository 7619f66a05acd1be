//! C ABI over the `pseudofam` library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `pf_*_load` / `pf_*_estimate` call and released by the matching
//! `pf_*_free`. Fallible functions return a [`PfStatus`]; on failure the
//! message is available from [`pf_last_error_message`] on the same thread.
//! Strings returned to the caller are owned by the caller and must be
//! released with [`pf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pseudofam::corpus::{load_parallel, LangPairId, Vocab};
use pseudofam::family::{family_for, InitRule};
use pseudofam::fim::{estimate_fim, FimVector};
use pseudofam::model::{load_checkpoint, ParamStore, SectionId};
use pseudofam::similarity::{similarity_matrix, Method, SimilarityMatrix};
use pseudofam::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    HashMismatch = 6,
    NonFinite = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfMethod {
    Mse = 0,
    Kl = 1,
    Overlap = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfInitRule {
    FirstTwo = 0,
    FirstOnly = 1,
}

/// Trained model parameters.
pub struct PfModel(ParamStore);

/// Token vocabulary.
pub struct PfVocab(Vocab);

/// Diagonal Fisher estimate for one language pair.
pub struct PfFim(FimVector);

/// Square pairwise similarity matrix.
pub struct PfMatrix(SimilarityMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PfStatus::Io,
            Error::Parse { .. } | Error::Format { .. } => PfStatus::Parse,
            Error::HashMismatch { .. } => PfStatus::HashMismatch,
            Error::NonFinite(_) | Error::Divergence { .. } => PfStatus::NonFinite,
            Error::TokenOutOfRange { .. } => PfStatus::OutOfRange,
            Error::Invalid(_) | Error::Empty(_) | Error::LengthMismatch { .. } => PfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure, and converts panics into `PfStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside pseudofam".into());
            PfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|_| Failure(PfStatus::InvalidArgument, "string contains nul".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn pair_arg(s: &str) -> Result<LangPairId, Failure> {
    Ok(s.parse::<LangPairId>()?)
}

fn method_of(m: PfMethod) -> Method {
    match m {
        PfMethod::Mse => Method::Mse,
        PfMethod::Kl => Method::Kl,
        PfMethod::Overlap => Method::Overlap,
    }
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next `pf_*` call on this thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_model_load(path: *const c_char, out: *mut *mut PfModel) -> PfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, PfModel(load_checkpoint(path)?))
    })
}

/// # Safety
/// `model` must be null or a handle from `pf_model_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_model_free(model: *mut PfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn pf_model_num_params(model: *const PfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.len())
}

/// Hex content hash of the parameters.
///
/// # Safety
/// `model` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_model_hash(model: *const PfModel, out: *mut *mut c_char) -> PfStatus {
    guard(|| {
        let m = obj(model, "model")?;
        put_string(out, m.0.content_hash())
    })
}

/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_vocab_load(path: *const c_char, out: *mut *mut PfVocab) -> PfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, PfVocab(Vocab::load(path)?))
    })
}

/// # Safety
/// `vocab` must be null or a handle from `pf_vocab_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_vocab_free(vocab: *mut PfVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Estimates the Fisher diagonal of `model` on the tab-separated corpus at
/// `corpus_path`, labelled with `pair` (e.g. `"aa-en"`).
///
/// # Safety
/// Handles must be live, strings valid C strings, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_fim_estimate(
    model: *const PfModel,
    vocab: *const PfVocab,
    corpus_path: *const c_char,
    pair: *const c_char,
    batch_size: usize,
    seed: u64,
    out: *mut *mut PfFim,
) -> PfStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let v = obj(vocab, "vocab")?;
        let path = str_arg(corpus_path, "corpus_path")?;
        let pair = pair_arg(str_arg(pair, "pair")?)?;
        let corpus = load_parallel(path, pair, &v.0)?;
        put(out, PfFim(estimate_fim(&m.0, &corpus, batch_size, seed)?))
    })
}

/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_fim_load(path: *const c_char, out: *mut *mut PfFim) -> PfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, PfFim(FimVector::load(path)?))
    })
}

/// # Safety
/// `fim` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pf_fim_save(fim: *const PfFim, path: *const c_char) -> PfStatus {
    guard(|| {
        let f = obj(fim, "fim")?;
        let path = str_arg(path, "path")?;
        Ok(f.0.save(path)?)
    })
}

/// Number of entries, or 0 for a null handle.
///
/// # Safety
/// `fim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_fim_len(fim: *const PfFim) -> usize {
    fim.as_ref().map_or(0, |f| f.0.len())
}

/// Copies up to `cap` values into `buf` and returns the full length.
///
/// # Safety
/// `fim` must be null or a live handle; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_fim_values(fim: *const PfFim, buf: *mut f64, cap: usize) -> usize {
    let Some(f) = fim.as_ref() else { return 0 };
    let vals = f.0.values();
    if !buf.is_null() {
        let n = vals.len().min(cap);
        ptr::copy_nonoverlapping(vals.as_ptr(), buf, n);
    }
    vals.len()
}

/// # Safety
/// `fim` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_fim_free(fim: *mut PfFim) {
    if !fim.is_null() {
        drop(Box::from_raw(fim));
    }
}

/// Scores every ordered pair of `fims`. `sections` is `"ffn"`, `"all"`, or a
/// comma list of section labels such as `"E_f,D_f"`; null means `"ffn"`.
///
/// # Safety
/// `fims` must point to `n` live handles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_similarity_matrix(
    fims: *const *const PfFim,
    n: usize,
    method: PfMethod,
    k_fraction: f64,
    sections: *const c_char,
    out: *mut *mut PfMatrix,
) -> PfStatus {
    guard(|| {
        if fims.is_null() {
            return Err(null("fims"));
        }
        let list = std::slice::from_raw_parts(fims, n)
            .iter()
            .map(|&p| obj(p, "fim").map(|f| f.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let sections = if sections.is_null() {
            SectionId::FFN.to_vec()
        } else {
            SectionId::parse_filter(str_arg(sections, "sections")?)?
        };
        put(
            out,
            PfMatrix(similarity_matrix(&list, method_of(method), k_fraction, &sections)?),
        )
    })
}

/// Loads a matrix CSV together with its metadata sidecar.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_matrix_load(path: *const c_char, method: PfMethod, out: *mut *mut PfMatrix) -> PfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, PfMatrix(SimilarityMatrix::load(path, method_of(method))?))
    })
}

/// Writes the matrix CSV and its metadata sidecar.
///
/// # Safety
/// `matrix` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pf_matrix_save(matrix: *const PfMatrix, path: *const c_char) -> PfStatus {
    guard(|| {
        let m = obj(matrix, "matrix")?;
        let path = str_arg(path, "path")?;
        Ok(m.0.save(path)?)
    })
}

/// Number of rows (and columns), or 0 for a null handle.
///
/// # Safety
/// `matrix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_matrix_size(matrix: *const PfMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.pairs.len())
}

/// Score of auxiliary `col` as seen from target `row`.
///
/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_matrix_get(matrix: *const PfMatrix, row: usize, col: usize, out: *mut f64) -> PfStatus {
    guard(|| {
        let m = obj(matrix, "matrix")?;
        let n = m.0.pairs.len();
        if row >= n || col >= n {
            return Err(Failure(
                PfStatus::OutOfRange,
                format!("index ({row}, {col}) outside {n}x{n} matrix"),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.0.scores[row][col];
        Ok(())
    })
}

/// Pair code (e.g. `"aa-en"`) of row `i`.
///
/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_matrix_pair(matrix: *const PfMatrix, i: usize, out: *mut *mut c_char) -> PfStatus {
    guard(|| {
        let m = obj(matrix, "matrix")?;
        let pair = m.0.pairs.get(i).ok_or_else(|| {
            Failure(
                PfStatus::OutOfRange,
                format!("row {i} outside matrix of {}", m.0.pairs.len()),
            )
        })?;
        put_string(out, pair.code())
    })
}

/// # Safety
/// `matrix` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn pf_matrix_free(matrix: *mut PfMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Selects the pseudo family of `target` and returns its record as JSON.
///
/// # Safety
/// `matrix` must be a live handle, `target` a valid C string, `out` a valid
/// pointer. The returned string must be released with `pf_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pf_select_family(
    matrix: *const PfMatrix,
    target: *const c_char,
    init: PfInitRule,
    out: *mut *mut c_char,
) -> PfStatus {
    guard(|| {
        let m = obj(matrix, "matrix")?;
        let target = pair_arg(str_arg(target, "target")?)?;
        let rule = match init {
            PfInitRule::FirstTwo => InitRule::FirstTwo,
            PfInitRule::FirstOnly => InitRule::FirstOnly,
        };
        let (_, record) = family_for(&m.0, &target, rule)?;
        put_string(out, record.to_json())
    })
}
