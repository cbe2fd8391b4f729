use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use medreport::model::init_params;
use medreport::training::AdamState;
use medreport::{Checkpoint, Rng, TrainConfig};
use medreport_ffi::*;

fn last_error() -> String {
    let p = mr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn toy_checkpoint(dir: &Path) -> PathBuf {
    let cfg = TrainConfig::toy();
    let params = init_params(&cfg, &mut Rng::seeded(11));
    let ck = Checkpoint {
        adam: AdamState::new(&params),
        params,
        config: cfg,
        epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let path = dir.join("toy.hgc");
    ck.save(&path).unwrap();
    path
}

#[test]
fn bleu_and_rouge_through_the_c_abi() {
    let c = CString::new("the cat").unwrap();
    let r = CString::new("the cat sat").unwrap();
    let mut b = [0.0f64; 4];
    assert_eq!(unsafe { mr_bleu(c.as_ptr(), r.as_ptr(), b.as_mut_ptr()) }, MrStatus::Ok);
    assert!((b[0] - (-0.5f64).exp()).abs() < 1e-12);

    let c = CString::new("a b c d").unwrap();
    let r = CString::new("a c d").unwrap();
    let mut f = 0.0;
    assert_eq!(unsafe { mr_rouge_l(c.as_ptr(), r.as_ptr(), &mut f) }, MrStatus::Ok);
    assert!((f - 0.8798).abs() < 1e-4);
}

#[test]
fn null_arguments_are_reported() {
    let r = CString::new("x").unwrap();
    let mut f = 0.0;
    assert_eq!(unsafe { mr_rouge_l(ptr::null(), r.as_ptr(), &mut f) }, MrStatus::NullArgument);
    assert!(last_error().contains("candidate"));
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mr_model_load(ptr::null(), &mut m) }, MrStatus::NullArgument);
    assert!(m.is_null());
    unsafe {
        mr_model_free(ptr::null_mut());
        mr_string_free(ptr::null_mut());
    }
}

#[test]
fn error_clears_on_success() {
    let r = CString::new("x").unwrap();
    let mut f = 0.0;
    unsafe { mr_rouge_l(ptr::null(), r.as_ptr(), &mut f) };
    assert!(!mr_last_error().is_null());
    assert_eq!(unsafe { mr_rouge_l(r.as_ptr(), r.as_ptr(), &mut f) }, MrStatus::Ok);
    assert!(mr_last_error().is_null());
}

#[test]
fn missing_checkpoint_is_io_error() {
    let p = CString::new("/nonexistent/model.hgc").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mr_model_load(p.as_ptr(), &mut m) }, MrStatus::Io);
    assert!(last_error().contains("/nonexistent/model.hgc"));
}

#[test]
fn corrupt_checkpoint_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.hgc");
    std::fs::write(&path, b"NOPE").unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mr_model_load(p.as_ptr(), &mut m) }, MrStatus::Format);
}

#[test]
fn load_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let path = toy_checkpoint(dir.path());
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mr_model_load(p.as_ptr(), &mut model) }, MrStatus::Ok);
    let (mut n, mut d) = (0usize, 0usize);
    assert_eq!(unsafe { mr_model_input_shape(model, &mut n, &mut d) }, MrStatus::Ok);
    assert_eq!((n, d), (4, 8));

    let feats: Vec<f64> = (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut json = ptr::null_mut();
    let st = unsafe { mr_model_generate(model, feats.as_ptr(), n, d, -1.0, &mut json) };
    assert_eq!(st, MrStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    unsafe { mr_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let sents = v["sentences"].as_array().unwrap();
    assert!(!sents.is_empty() && sents.len() <= TrainConfig::toy().s_max);
    assert_eq!(v["stop_probs"].as_array().unwrap().len(), sents.len());
    assert_eq!(v["tags"].as_array().unwrap().len(), 3);

    let mut json = ptr::null_mut();
    let st = unsafe { mr_model_generate(model, feats.as_ptr(), n, d + 1, 0.5, &mut json) };
    assert_eq!(st, MrStatus::Shape);
    assert!(json.is_null());
    let st = unsafe { mr_model_generate(model, feats.as_ptr(), n, d, 1.5, &mut json) };
    assert_eq!(st, MrStatus::InvalidArgument);
    unsafe { mr_model_free(model) };
}

#[test]
fn toy_gradcheck_passes() {
    let mut err = f64::NAN;
    assert_eq!(unsafe { mr_gradcheck_toy(3, 1e-4, &mut err) }, MrStatus::Ok);
    assert!(err < 1e-3, "{err}");
    assert_eq!(unsafe { mr_gradcheck_toy(3, 0.0, &mut err) }, MrStatus::InvalidArgument);
}

fn c_compiler() -> Option<&'static str> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/medreport.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "mr_last_error",
        "mr_string_free",
        "mr_model_load",
        "mr_model_free",
        "mr_model_input_shape",
        "mr_model_generate",
        "mr_gradcheck_toy",
        "mr_bleu",
        "mr_rouge_l",
        "MR_STATUS_OK = 0",
        "typedef struct MrModel MrModel",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let Some(cc) = c_compiler() else { return };
    let status = Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = c_compiler() else { return };
    let target = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target");
    let lib = ["debug", "release"]
        .iter()
        .map(|p| target.join(p).join("libmedreport_ffi.a"))
        .find(|p| p.exists());
    let Some(lib) = lib else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <math.h>
#include <stdio.h>
#include "medreport.h"
int main(void) {
    double b[4];
    if (mr_bleu("the cat", "the cat sat", b) != MR_STATUS_OK) return 1;
    if (fabs(b[0] - 0.60653066) > 1e-6) return 2;
    MrModel *m = NULL;
    if (mr_model_load("/nonexistent", &m) != MR_STATUS_IO) return 3;
    if (mr_last_error() == NULL) return 4;
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
