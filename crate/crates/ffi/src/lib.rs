//! C ABI over `medreport`: load a trained checkpoint, generate reports from
//! region features, run the toy gradient check and score captions.
//!
//! Every function returns an [`MrStatus`]; on failure the message is
//! available from [`mr_last_error`] until the next call on the same thread.
//! Strings handed out by the library must be released with [`mr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use medreport::decoder::{generate_report, GenerateOptions};
use medreport::metrics;
use medreport::model::init_params;
use medreport::training::{loss_gradient_check, random_example};
use medreport::{encode, Checkpoint, Error, ImageInput, Rng, Tape, Tensor, TrainConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Divergence = 6,
    Panic = 7,
}

/// Opaque handle to a loaded model.
pub struct MrModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MrStatus {
    match e {
        Error::Io { .. } => MrStatus::Io,
        Error::Format { .. } | Error::Parse(_) | Error::Json(_) | Error::Image(_) => MrStatus::Format,
        Error::Dimension { .. } => MrStatus::Shape,
        Error::Divergence { .. } => MrStatus::Divergence,
        Error::Domain(_) | Error::Contract(_) => MrStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MrStatus, String)>) -> MrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MrStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MrStatus, String) {
    (MrStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MrStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Message of the last failed call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn mr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_model_load(path: *const c_char, out: *mut *mut MrModel) -> MrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let checkpoint = Checkpoint::load(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MrModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mr_model_load`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mr_model_free(model: *mut MrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the expected region count and feature width of the model.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_model_input_shape(
    model: *const MrModel,
    n_regions: *mut usize,
    feature_dim: *mut usize,
) -> MrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if n_regions.is_null() || feature_dim.is_null() {
            return Err(null("out"));
        }
        *n_regions = m.checkpoint.config.num_regions();
        *feature_dim = m.checkpoint.config.feature_dim;
        Ok(())
    })
}

/// Greedy report generation from a row-major `n_regions × feature_dim`
/// feature map. The result is JSON with `sentences` (word ids),
/// `stop_probs`, `truncated` and `tags`; free it with [`mr_string_free`].
/// A negative `stop_threshold` keeps the model's configured threshold.
///
/// # Safety
/// `features` must point to `n_regions * feature_dim` doubles; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_model_generate(
    model: *const MrModel,
    features: *const f64,
    n_regions: usize,
    feature_dim: usize,
    stop_threshold: f64,
    out_json: *mut *mut c_char,
) -> MrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if features.is_null() {
            return Err(null("features"));
        }
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let len = n_regions
            .checked_mul(feature_dim)
            .ok_or((MrStatus::InvalidArgument, "feature size overflows".to_string()))?;
        let data = std::slice::from_raw_parts(features, len).to_vec();
        let input = ImageInput::Features(Tensor::new(vec![n_regions, feature_dim], data).map_err(lib_err)?);
        let cfg = &m.checkpoint.config;
        let params = &m.checkpoint.params;
        let mut opts = GenerateOptions::from_config(cfg);
        if stop_threshold >= 0.0 {
            opts.stop_threshold = stop_threshold;
        }
        let mut tape = Tape::new();
        let enc = encode(&mut tape, params, cfg, &input, None).map_err(lib_err)?;
        let (report, _) = generate_report(&mut tape, params, cfg, &enc, &opts).map_err(lib_err)?;
        let json = serde_json::json!({
            "sentences": report.sentences,
            "stop_probs": report.stop_probs,
            "truncated": report.truncated,
            "tags": enc.tag_ids,
        });
        let s = CString::new(json.to_string()).expect("JSON has no NUL");
        *out_json = s.into_raw();
        Ok(())
    })
}

/// Gradient check of the full training loss on the built-in toy
/// configuration with one random example drawn from `seed`.
///
/// # Safety
/// `max_rel_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_gradcheck_toy(seed: u64, eps: f64, max_rel_error: *mut f64) -> MrStatus {
    guard(|| {
        if max_rel_error.is_null() {
            return Err(null("max_rel_error"));
        }
        let mut cfg = TrainConfig::toy();
        cfg.seed = seed;
        let mut rng = Rng::seeded(seed);
        let store = init_params(&cfg, &mut rng);
        let ex = random_example(&cfg, &mut rng, "toy", 2);
        let report = loss_gradient_check(&store, &cfg, &ex, eps).map_err(lib_err)?;
        *max_rel_error = report.max_rel_error;
        Ok(())
    })
}

/// BLEU-1..4 of one whitespace-tokenized candidate against one reference.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn mr_bleu(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> MrStatus {
    guard(|| {
        let c = tokens(str_arg(candidate, "candidate")?);
        let r = tokens(str_arg(reference, "reference")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let b = metrics::bleu(&[c], &[vec![r]]).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, 4).copy_from_slice(&b);
        Ok(())
    })
}

/// ROUGE-L (beta 1.2) of one whitespace-tokenized candidate against one reference.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_rouge_l(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> MrStatus {
    guard(|| {
        let c = tokens(str_arg(candidate, "candidate")?);
        let r = tokens(str_arg(reference, "reference")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = metrics::rouge_l(&[c], &[vec![r]]).map_err(lib_err)?;
        Ok(())
    })
}
