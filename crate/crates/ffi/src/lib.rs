//! C interface to `scone-core`.
//!
//! Datasets and models cross the boundary as opaque handles created by a
//! `*_read`, `*_load`, `*_init` or `*_generate` call and released with the
//! matching `*_free`. Every fallible function returns a [`SconeStatus`]; on
//! failure a description is available from [`scone_last_error`] on the same
//! thread until the next failing call.
//!
//! Matrices are row-major `double[9]`. Descriptors are 64 little-endian bytes.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use scone_core::config::ConfigFile;
use scone_core::datagen::{generate_dataset, WorldConfig};
use scone_core::error::{Error, ErrorClass};
use scone_core::geometry::rotation_error;
use scone_core::matching::{precision_eval, EvalMode};
use scone_core::model::{hamming_distance, BinaryDescriptor, Dataset, DESCRIPTOR_BYTES};
use scone_core::nn::{init_model, load_model, save_model, EmbeddingModel, EMBEDDING_DIM};
use scone_core::training::{contrastive_loss, train, PairLabel, TrainConfig};
use scone_core::{constellation, io, rng};

/// Length of an embedding written by [`scone_model_embed`].
pub const SCONE_EMBEDDING_DIM: usize = 48;
/// Length in bytes of a binary descriptor.
pub const SCONE_DESCRIPTOR_BYTES: usize = 64;

const _: () = assert!(SCONE_EMBEDDING_DIM == EMBEDDING_DIM && SCONE_DESCRIPTOR_BYTES == DESCRIPTOR_BYTES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SconeStatus {
    Ok = 0,
    /// Bad argument or configuration.
    UsageError = 1,
    /// Unreadable, malformed or insufficient input data.
    DataError = 2,
    /// Divergence or a degenerate geometric configuration.
    NumericError = 3,
    NullPointer = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Opaque dataset handle.
pub struct SconeDataset(Dataset);

/// Opaque model handle.
pub struct SconeModel(EmbeddingModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SconeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SconeStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            match e.class() {
                ErrorClass::Usage => SconeStatus::UsageError,
                ErrorClass::Data => SconeStatus::DataError,
                ErrorClass::Numeric => SconeStatus::NumericError,
            }
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            SconeStatus::NullPointer
        }
        Ok(Err(Failure::Usage(msg))) => {
            set_last_error(msg);
            SconeStatus::UsageError
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SconeStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    let s = as_ref(p, what)?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::Usage(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn optional_text(p: *const c_char, what: &'static str) -> Result<Option<String>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(|s| Some(s.to_string()))
        .map_err(|_| Failure::Usage(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix(p: *const f64, what: &'static str) -> Result<nalgebra::Matrix3<f64>, Failure> {
    Ok(nalgebra::Matrix3::from_row_slice(slice(p, 9, what)?))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scone_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scone_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn scone_dataset_read(path: *const c_char, out: *mut *mut SconeDataset) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ds = io::read_dataset(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SconeDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn scone_dataset_write(dataset: *const SconeDataset, path: *const c_char) -> SconeStatus {
    guard(|| {
        let ds = as_ref(dataset, "dataset")?;
        io::write_dataset(&ds.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Generates a synthetic dataset. `config` is `key = value` text using the
/// world-generation keys, or null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn scone_dataset_generate(config: *const c_char, out: *mut *mut SconeDataset) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut world = WorldConfig::default();
        if let Some(text) = optional_text(config, "config")? {
            ConfigFile::parse(&text, None)?.apply_world(&mut world)?;
        }
        let ds = generate_dataset(&world)?;
        *out = Box::into_raw(Box::new(SconeDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn scone_dataset_free(dataset: *mut SconeDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of keyframes; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn scone_dataset_frame_count(dataset: *const SconeDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.frames.len())
}

/// Number of landmarks; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn scone_dataset_landmark_count(dataset: *const SconeDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.landmarks.len())
}

/// Number of keypoints in the keyframe at position `frame` (not its id).
#[no_mangle]
pub unsafe extern "C" fn scone_dataset_keypoint_count(
    dataset: *const SconeDataset,
    frame: usize,
    out: *mut usize,
) -> SconeStatus {
    guard(|| {
        let ds = as_ref(dataset, "dataset")?;
        let out = out_ref(out, "out")?;
        let f = ds.0.frames.get(frame).ok_or_else(|| {
            Failure::Usage(format!("frame {frame} out of range ({} frames)", ds.0.frames.len()))
        })?;
        *out = f.keypoints.len();
        Ok(())
    })
}

/// Untrained model with neighbourhood size `k`.
#[no_mangle]
pub unsafe extern "C" fn scone_model_init(seed: u64, k: usize, out: *mut *mut SconeModel) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if k == 0 {
            return Err(Failure::Usage("k must be at least 1".into()));
        }
        *out = Box::into_raw(Box::new(SconeModel(init_model(seed, k))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn scone_model_load(path: *const c_char, out: *mut *mut SconeModel) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let m = load_model(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SconeModel(m)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn scone_model_save(model: *const SconeModel, path: *const c_char) -> SconeStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        save_model(&m.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn scone_model_free(model: *mut SconeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Neighbourhood size the model was built for; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn scone_model_k(model: *const SconeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.k)
}

/// Trains a model on `train_set`, selecting the best epoch on `val_set` when
/// it is non-null. `config` is `key = value` text using the training keys,
/// or null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn scone_model_train(
    train_set: *const SconeDataset,
    val_set: *const SconeDataset,
    config: *const c_char,
    out: *mut *mut SconeModel,
) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let train_ds = as_ref(train_set, "train_set")?;
        let val = val_set.as_ref().map(|v| &v.0);
        let mut cfg = TrainConfig::default();
        if let Some(text) = optional_text(config, "config")? {
            ConfigFile::parse(&text, None)?.apply_train(&mut cfg)?;
        }
        let (model, _) = train(&train_ds.0, val, &cfg)?;
        *out = Box::into_raw(Box::new(SconeModel(model)));
        Ok(())
    })
}

/// Embeds keypoint `keypoint` of the keyframe at position `frame`, writing
/// `SCONE_EMBEDDING_DIM` values to `out`. `out_len` must be at least that.
#[no_mangle]
pub unsafe extern "C" fn scone_model_embed(
    model: *const SconeModel,
    dataset: *const SconeDataset,
    frame: usize,
    keypoint: usize,
    out: *mut f64,
    out_len: usize,
) -> SconeStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let ds = as_ref(dataset, "dataset")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if out_len < EMBEDDING_DIM {
            return Err(Failure::Usage(format!("out_len {out_len} < {EMBEDDING_DIM}")));
        }
        let f = ds.0.frames.get(frame).ok_or_else(|| {
            Failure::Usage(format!("frame {frame} out of range ({} frames)", ds.0.frames.len()))
        })?;
        if keypoint >= f.keypoints.len() {
            return Err(Failure::Usage(format!(
                "keypoint {keypoint} out of range ({} keypoints)",
                f.keypoints.len()
            )));
        }
        let c = constellation::build_constellation(f, keypoint, m.0.k)?;
        let e = m.0.embed_constellation(&c)?;
        std::slice::from_raw_parts_mut(out, EMBEDDING_DIM).copy_from_slice(&e);
        Ok(())
    })
}

/// Hamming distance between two `SCONE_DESCRIPTOR_BYTES`-byte descriptors.
#[no_mangle]
pub unsafe extern "C" fn scone_hamming_distance(a: *const u8, b: *const u8, out: *mut u32) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let da = slice(a, DESCRIPTOR_BYTES, "a")?;
        let db = slice(b, DESCRIPTOR_BYTES, "b")?;
        let da = BinaryDescriptor::from_le_bytes(da.try_into().expect("fixed length"));
        let db = BinaryDescriptor::from_le_bytes(db.try_into().expect("fixed length"));
        *out = hamming_distance(&da, &db);
        Ok(())
    })
}

/// Angle in radians of `r_est · r_gtᵀ`.
#[no_mangle]
pub unsafe extern "C" fn scone_rotation_error(r_est: *const f64, r_gt: *const f64, out: *mut f64) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = rotation_error(&matrix(r_est, "r_est")?, &matrix(r_gt, "r_gt")?);
        Ok(())
    })
}

/// Contrastive loss of one pair. `similar` is 1 for a matching pair and 0
/// otherwise. `grad1` and `grad2` may be null; when given they receive `len`
/// values each.
#[no_mangle]
pub unsafe extern "C" fn scone_contrastive_loss(
    e1: *const f64,
    e2: *const f64,
    len: usize,
    similar: u8,
    margin: f64,
    loss: *mut f64,
    grad1: *mut f64,
    grad2: *mut f64,
) -> SconeStatus {
    guard(|| {
        let loss = out_ref(loss, "loss")?;
        let a = slice(e1, len, "e1")?;
        let b = slice(e2, len, "e2")?;
        let label = match similar {
            1 => PairLabel::Similar,
            0 => PairLabel::Dissimilar,
            other => return Err(Failure::Usage(format!("similar must be 0 or 1, got {other}"))),
        };
        let (l, g1, g2) = contrastive_loss(a, b, label, margin);
        *loss = l;
        if !grad1.is_null() {
            std::slice::from_raw_parts_mut(grad1, len).copy_from_slice(&g1);
        }
        if !grad2.is_null() {
            std::slice::from_raw_parts_mut(grad2, len).copy_from_slice(&g2);
        }
        Ok(())
    })
}

/// Nearest-neighbour precision on `dataset` with `n_samples` queries. A null
/// `model` evaluates raw descriptors with neighbourhood size `k`; otherwise
/// `k` is ignored and the model's own is used.
#[no_mangle]
pub unsafe extern "C" fn scone_precision_eval(
    model: *const SconeModel,
    dataset: *const SconeDataset,
    k: usize,
    n_samples: usize,
    seed: u64,
    out: *mut f64,
) -> SconeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let ds = as_ref(dataset, "dataset")?;
        let mode = match model.as_ref() {
            Some(m) => EvalMode::Scone(&m.0),
            None => EvalMode::Raw { k },
        };
        let mut rng = rng::stream(seed, "eval-precision");
        *out = precision_eval(&mode, &ds.0, n_samples, &mut rng)?.precision;
        Ok(())
    })
}
