use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use l2ac::meta_classifier::{MetaClassifier, ModelConfig, SimMode};
use l2ac_ffi::*;

fn model_file(dir: &Path, dim: usize) -> CString {
    let cfg = ModelConfig {
        k: 2,
        dim,
        hidden: 4,
        sim: SimMode::AbsSubSum,
    };
    let path = dir.join("model.txt");
    MetaClassifier::new(cfg, 3).unwrap().save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = l2ac_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    l2ac_string_free(s);
    out
}

#[test]
fn round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = model_file(dir.path(), 3);
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(l2ac_model_load(path.as_ptr(), &mut model), L2acStatus::Ok);
        assert_eq!(l2ac_model_dim(model), 3);
        assert_eq!(l2ac_model_k(model), 2);
        let mut hash = ptr::null_mut();
        assert_eq!(l2ac_model_checkpoint_hash(model, &mut hash), L2acStatus::Ok);
        assert_eq!(take(hash).len(), 64);

        let mut reg = ptr::null_mut();
        assert_eq!(l2ac_registry_new(3, &mut reg), L2acStatus::Ok);
        let a = CString::new("a").unwrap();
        let b = CString::new("b").unwrap();
        let rows_a = [1.0, 0.0, 0.0, 0.9, 0.1, 0.0];
        let rows_b = [0.0, 0.0, 1.0];
        assert_eq!(
            l2ac_registry_add_class(reg, a.as_ptr(), rows_a.as_ptr(), 2, 3),
            L2acStatus::Ok
        );
        assert_eq!(
            l2ac_registry_add_class(reg, b.as_ptr(), rows_b.as_ptr(), 1, 3),
            L2acStatus::Ok
        );
        assert_eq!(l2ac_registry_len(reg), 2);
        let mut label = ptr::null_mut();
        assert_eq!(l2ac_registry_label(reg, 1, &mut label), L2acStatus::Ok);
        assert_eq!(take(label), "b");

        let x = [0.8, 0.2, 0.1];
        let mut probs = [0.0; 2];
        let mut out = ptr::null_mut();
        assert_eq!(
            l2ac_classify(model, reg, x.as_ptr(), 3, &mut out, probs.as_mut_ptr(), 2),
            L2acStatus::Ok
        );
        let inner = MetaClassifier::load(path.to_str().unwrap()).unwrap();
        // Neighbors in descending cosine order: the second row is closer.
        let want_a = inner.class_probability(&x, &[&rows_a[3..], &rows_a[..3]]).unwrap();
        assert_eq!(probs[0], want_a);
        let max = probs[0].max(probs[1]);
        if out.is_null() {
            assert!(max <= 0.5);
        } else {
            assert!(max > 0.5);
            take(out);
        }

        let saved = CString::new(dir.path().join("seen.reg").to_str().unwrap()).unwrap();
        assert_eq!(l2ac_registry_save(reg, saved.as_ptr()), L2acStatus::Ok);
        assert_eq!(l2ac_registry_remove_class(reg, a.as_ptr()), L2acStatus::Ok);
        assert_eq!(l2ac_registry_len(reg), 1);
        let mut reloaded = ptr::null_mut();
        assert_eq!(l2ac_registry_load(saved.as_ptr(), &mut reloaded), L2acStatus::Ok);
        assert_eq!(l2ac_registry_len(reloaded), 2);

        l2ac_registry_free(reloaded);
        l2ac_registry_free(reg);
        l2ac_model_free(model);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = model_file(dir.path(), 2);
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.txt").unwrap();
        assert_eq!(l2ac_model_load(missing.as_ptr(), &mut model), L2acStatus::Io);
        assert!(last_error().contains("/nonexistent/model.txt"));
        assert!(model.is_null());
        assert_eq!(l2ac_model_load(ptr::null(), &mut model), L2acStatus::NullPointer);
        assert_eq!(l2ac_model_load(path.as_ptr(), &mut model), L2acStatus::Ok);

        let mut reg = ptr::null_mut();
        assert_eq!(l2ac_registry_new(0, &mut reg), L2acStatus::InvalidArgument);
        assert_eq!(l2ac_registry_new(2, &mut reg), L2acStatus::Ok);
        let x = [0.1, 0.2];
        let mut out = ptr::null_mut();
        assert_eq!(
            l2ac_classify(model, reg, x.as_ptr(), 2, &mut out, ptr::null_mut(), 0),
            L2acStatus::EmptySeenSet
        );
        let a = CString::new("a").unwrap();
        assert_eq!(
            l2ac_registry_add_class(reg, a.as_ptr(), x.as_ptr(), 1, 3),
            L2acStatus::Shape
        );
        assert_eq!(
            l2ac_registry_add_class(reg, a.as_ptr(), x.as_ptr(), 0, 2),
            L2acStatus::InvalidArgument
        );
        assert_eq!(
            l2ac_registry_add_class(reg, a.as_ptr(), x.as_ptr(), 1, 2),
            L2acStatus::Ok
        );
        assert_eq!(
            l2ac_registry_add_class(reg, a.as_ptr(), x.as_ptr(), 1, 2),
            L2acStatus::DuplicateClass
        );
        let z = CString::new("z").unwrap();
        assert_eq!(l2ac_registry_remove_class(reg, z.as_ptr()), L2acStatus::UnknownClass);
        let mut probs = [0.0; 1];
        assert_eq!(
            l2ac_classify(model, reg, x.as_ptr(), 2, &mut out, probs.as_mut_ptr(), 0),
            L2acStatus::BufferTooSmall
        );
        let mut label = ptr::null_mut();
        assert_eq!(l2ac_registry_label(reg, 5, &mut label), L2acStatus::InvalidArgument);
        l2ac_registry_free(reg);
        l2ac_model_free(model);
        l2ac_model_free(ptr::null_mut());
        l2ac_string_free(ptr::null_mut());
    }
}

#[test]
fn grad_check_and_version() {
    let mut err = f64::NAN;
    assert_eq!(unsafe { l2ac_grad_check(4, 2, 5, 1, 1e-4, &mut err) }, L2acStatus::Ok);
    assert!(err < 1e-4);
    let v = unsafe { CStr::from_ptr(l2ac_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/l2ac.h")).unwrap();
    for f in [
        "l2ac_last_error",
        "l2ac_version",
        "l2ac_string_free",
        "l2ac_model_load",
        "l2ac_model_free",
        "l2ac_model_checkpoint_hash",
        "l2ac_registry_new",
        "l2ac_registry_load",
        "l2ac_registry_save",
        "l2ac_registry_add_class",
        "l2ac_registry_remove_class",
        "l2ac_classify",
        "l2ac_grad_check",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct L2acModel L2acModel;"));
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libl2ac_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_static_library() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping C link check");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("no C compiler available; skipping C link check");
        return;
    };
    assert!(status.success(), "C smoke program failed to compile");
    let model = model_file(dir.path(), 4);
    let out = Command::new(&exe).arg(model.to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let (label, prob) = text.trim().split_once(' ').unwrap();
    let prob: f64 = prob.parse().unwrap();
    assert_eq!(label == "alpha", prob > 0.5, "{text}");
}
