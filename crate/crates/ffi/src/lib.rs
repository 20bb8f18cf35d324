//! C ABI over the `l2ac` crate.
//!
//! Models and registries are opaque heap handles released with their
//! `*_free` function. Every fallible call returns an [`L2acStatus`]; on
//! failure [`l2ac_last_error`] describes the error for the calling thread.
//! Strings handed out by the library are released with [`l2ac_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use l2ac::embedding::ExampleRecord;
use l2ac::meta_classifier::{grad_check_pipeline, MetaClassifier, Outcome};
use l2ac::registry::SeenClassSet;
use l2ac::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2acStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    UnknownClass = 6,
    DuplicateClass = 7,
    EmptySeenSet = 8,
    BufferTooSmall = 9,
    Runtime = 10,
    Panic = 11,
}

/// Trained meta-classifier.
pub struct L2acModel {
    inner: MetaClassifier,
}

/// Seen-class registry.
pub struct L2acRegistry {
    inner: SeenClassSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> L2acStatus {
    match e {
        Error::Io { .. } => L2acStatus::Io,
        Error::Parse { .. } | Error::Format(_) => L2acStatus::Parse,
        Error::Shape { .. } => L2acStatus::Shape,
        Error::UnknownClass(_) => L2acStatus::UnknownClass,
        Error::DuplicateClass(_) | Error::DuplicateId(_) => L2acStatus::DuplicateClass,
        Error::EmptySeenSet => L2acStatus::EmptySeenSet,
        Error::InvalidLabel(_) | Error::EmptyClass(_) | Error::Config(_) => L2acStatus::InvalidArgument,
        _ => L2acStatus::Runtime,
    }
}

struct Failure(L2acStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(L2acStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> L2acStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => L2acStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            L2acStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(L2acStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(L2acStatus::InvalidArgument, "string contains NUL".into()))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn l2ac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn l2ac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2ac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ac_model_load(path: *const c_char, out: *mut *mut L2acModel) -> L2acStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = MetaClassifier::load(path)?;
        *out = Box::into_raw(Box::new(L2acModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`l2ac_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2ac_model_free(model: *mut L2acModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding dimension of `model`, or 0 if `model` is NULL.
///
/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn l2ac_model_dim(model: *const L2acModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().dim)
}

/// Neighbors per class used by `model`, or 0 if `model` is NULL.
///
/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn l2ac_model_k(model: *const L2acModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().k)
}

/// Writes the model's SHA-256 checkpoint hash as a new string.
///
/// # Safety
/// `model` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ac_model_checkpoint_hash(model: *const L2acModel, out: *mut *mut c_char) -> L2acStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(out, "out")?;
        *out = into_c_string(&model.inner.checkpoint_hash())?;
        Ok(())
    })
}

/// Creates an empty registry for embeddings of width `dim`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_new(dim: usize, out: *mut *mut L2acRegistry) -> L2acStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if dim == 0 {
            return Err(Failure(L2acStatus::InvalidArgument, "dim must be at least 1".into()));
        }
        *out = Box::into_raw(Box::new(L2acRegistry {
            inner: SeenClassSet::new(dim),
        }));
        Ok(())
    })
}

/// Loads a registry manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_load(path: *const c_char, out: *mut *mut L2acRegistry) -> L2acStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = SeenClassSet::load(path)?;
        *out = Box::into_raw(Box::new(L2acRegistry { inner }));
        Ok(())
    })
}

/// Writes the manifest to `path` and the embeddings to `<path>.emb`.
///
/// # Safety
/// `registry` must be a live registry handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_save(registry: *const L2acRegistry, path: *const c_char) -> L2acStatus {
    guard(|| {
        let registry = registry.as_ref().ok_or_else(|| null("registry"))?;
        let path = str_arg(path, "path")?;
        registry.inner.save(path)?;
        Ok(())
    })
}

/// # Safety
/// `registry` must be NULL or a registry handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_free(registry: *mut L2acRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}

/// Number of registered classes, or 0 if `registry` is NULL.
///
/// # Safety
/// `registry` must be NULL or a live registry handle.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_len(registry: *const L2acRegistry) -> usize {
    registry.as_ref().map_or(0, |r| r.inner.len())
}

/// Label of the class at `index` in insertion order, as a new string.
///
/// # Safety
/// `registry` must be a live registry handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_label(
    registry: *const L2acRegistry,
    index: usize,
    out: *mut *mut c_char,
) -> L2acStatus {
    guard(|| {
        let registry = registry.as_ref().ok_or_else(|| null("registry"))?;
        let out = out_arg(out, "out")?;
        let label = registry.inner.labels().get(index).ok_or_else(|| {
            Failure(
                L2acStatus::InvalidArgument,
                format!("index {index} out of range for {} classes", registry.inner.len()),
            )
        })?;
        *out = into_c_string(label)?;
        Ok(())
    })
}

/// Registers `label` with `rows` examples stored row-major in `vectors`
/// (`rows * dim` values). Example ids are `<label>-<i>`.
///
/// # Safety
/// `registry` must be a live registry handle, `label` a NUL-terminated
/// string and `vectors` must point to `rows * dim` readable values.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_add_class(
    registry: *mut L2acRegistry,
    label: *const c_char,
    vectors: *const f64,
    rows: usize,
    dim: usize,
) -> L2acStatus {
    guard(|| {
        let registry = registry.as_mut().ok_or_else(|| null("registry"))?;
        let label = str_arg(label, "label")?;
        if dim != registry.inner.dim() {
            return Err(Failure(
                L2acStatus::Shape,
                format!("dim {dim} does not match registry dim {}", registry.inner.dim()),
            ));
        }
        let total = rows
            .checked_mul(dim)
            .ok_or_else(|| Failure(L2acStatus::InvalidArgument, "rows * dim overflows".into()))?;
        let data = if total == 0 {
            &[][..]
        } else {
            slice_arg(vectors, total, "vectors")?
        };
        let examples = (0..rows)
            .map(|i| ExampleRecord::new(format!("{label}-{i}"), label, data[i * dim..(i + 1) * dim].to_vec()))
            .collect();
        registry.inner.add_class(label, examples)?;
        Ok(())
    })
}

/// # Safety
/// `registry` must be a live registry handle; `label` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l2ac_registry_remove_class(registry: *mut L2acRegistry, label: *const c_char) -> L2acStatus {
    guard(|| {
        let registry = registry.as_mut().ok_or_else(|| null("registry"))?;
        let label = str_arg(label, "label")?;
        registry.inner.remove_class(label)?;
        Ok(())
    })
}

/// Classifies `x` (`dim` values) against every registered class.
///
/// `out_label` receives a new string with the predicted label, or NULL when
/// the input is rejected. If `probs` is not NULL it receives one probability
/// per class in insertion order and `capacity` must be at least the number
/// of classes.
///
/// # Safety
/// Handles must be live; `x` must point to `dim` readable values; `probs`
/// must be NULL or point to `capacity` writable values.
#[no_mangle]
pub unsafe extern "C" fn l2ac_classify(
    model: *const L2acModel,
    registry: *const L2acRegistry,
    x: *const f64,
    dim: usize,
    out_label: *mut *mut c_char,
    probs: *mut f64,
    capacity: usize,
) -> L2acStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let registry = registry.as_ref().ok_or_else(|| null("registry"))?;
        let out_label = out_arg(out_label, "out_label")?;
        let x = slice_arg(x, dim, "x")?;
        let n = registry.inner.len();
        if !probs.is_null() && capacity < n {
            return Err(Failure(
                L2acStatus::BufferTooSmall,
                format!("capacity {capacity} is below {n} classes"),
            ));
        }
        let p = registry.inner.classify(x, &model.inner, model.inner.config().k)?;
        if !probs.is_null() {
            let dst = std::slice::from_raw_parts_mut(probs, n);
            for (d, label) in dst.iter_mut().zip(registry.inner.labels()) {
                *d = p.scores[label];
            }
        }
        *out_label = match &p.outcome {
            Outcome::Class(c) => into_c_string(c)?,
            Outcome::Reject => ptr::null_mut(),
        };
        Ok(())
    })
}

/// Gradient check of the full scoring and loss pipeline on a random model;
/// writes the maximum relative error.
///
/// # Safety
/// `out_max_rel_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ac_grad_check(
    dim: usize,
    k: usize,
    hidden: usize,
    seed: u64,
    step: f64,
    out_max_rel_error: *mut f64,
) -> L2acStatus {
    guard(|| {
        let out = out_arg(out_max_rel_error, "out_max_rel_error")?;
        *out = grad_check_pipeline(dim, k, hidden, seed, step)?;
        Ok(())
    })
}
