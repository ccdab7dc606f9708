//! C bindings for `cfnet`.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`/`*_load`
//! call and released with the matching `*_free`. Every fallible call returns a
//! [`CfnetStatus`]; the message of the last failure on the calling thread is
//! available through [`cfnet_last_error_message`]. Matrices are dense,
//! row-major `double` buffers in the real-lifted layout (`[Re; Im]` rows).

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cfnet::bench::{evaluate, NmseVariant, SchemeModel, SchemeName};
use cfnet::estimator::default_lambda;
use cfnet::simgen::{gen_dataset, Dataset, SystemConfig};
use cfnet::Error;
use ndarray::{ArrayView2, ShapeBuilder};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidConfig = 4,
    ShapeMismatch = 5,
    BufferTooSmall = 6,
    Numeric = 7,
    Io = 8,
    ArtifactMismatch = 9,
    NotFound = 10,
    Internal = 11,
    Panic = 12,
}

/// Selects how per-sample error ratios are averaged.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfnetNmseVariant {
    Unsquared = 0,
    Squared = 1,
}

/// Row and column counts of a lifted matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CfnetShape {
    pub rows: usize,
    pub cols: usize,
}

/// Scenario description.
pub struct CfnetConfig {
    inner: SystemConfig,
}

/// Generated or loaded samples sharing one sensing matrix.
pub struct CfnetDataset {
    inner: Dataset,
}

/// Estimator of one scheme.
pub struct CfnetModel {
    scheme: SchemeName,
    inner: SchemeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_last_error(msg: &str) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.as_bytes().to_vec());
}

struct Failure(CfnetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidDimension(_) | Error::ShapeMismatch(_) => CfnetStatus::ShapeMismatch,
            Error::InvalidConfig(_) => CfnetStatus::InvalidConfig,
            Error::InvalidArgument(_) | Error::Unsupported(_) => CfnetStatus::InvalidArgument,
            Error::Numeric(_) => CfnetStatus::Numeric,
            Error::Io { .. } | Error::Format { .. } => CfnetStatus::Io,
            Error::ArtifactMismatch(_) | Error::IncompleteRecord(_) => CfnetStatus::ArtifactMismatch,
            Error::Internal(_) => CfnetStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: CfnetStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CfnetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&msg);
            CfnetStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(CfnetStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CfnetStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CfnetStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(CfnetStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_into(src: ArrayView2<f64>, out: *mut f64, len: usize) -> Result<(), Failure> {
    let need = src.len();
    if out.is_null() {
        return Err(fail(CfnetStatus::NullPointer, "output buffer is null"));
    }
    if len < need {
        return Err(fail(CfnetStatus::BufferTooSmall, format!("buffer holds {len} values, {need} needed")));
    }
    let dst = std::slice::from_raw_parts_mut(out, need);
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *s;
    }
    Ok(())
}

fn sample(ds: &Dataset, index: usize) -> Result<&cfnet::simgen::DatasetSample, Failure> {
    ds.samples
        .get(index)
        .ok_or_else(|| fail(CfnetStatus::InvalidArgument, format!("sample {index} out of range 0..{}", ds.samples.len())))
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cfnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns its full length in bytes.
/// Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cfnet_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// The built-in desk-scale scenario.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_config_desk(out: *mut *mut CfnetConfig) -> CfnetStatus {
    guard(|| write_out(out, CfnetConfig { inner: SystemConfig::desk() }))
}

/// Parses a scenario from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_config_from_json(json: *const c_char, out: *mut *mut CfnetConfig) -> CfnetStatus {
    guard(|| {
        let cfg: SystemConfig = serde_json::from_str(text(json, "json")?)
            .map_err(|e| fail(CfnetStatus::InvalidConfig, e.to_string()))?;
        cfg.validate()?;
        write_out(out, CfnetConfig { inner: cfg })
    })
}

/// Overrides the measurement SNR in dB.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfnet_config_set_snr_db(cfg: *mut CfnetConfig, snr_db: f64) -> CfnetStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| fail(CfnetStatus::NullPointer, "config is null"))?;
        let mut next = cfg.inner.clone();
        next.snr_db = snr_db;
        next.validate()?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfnet_config_free(cfg: *mut CfnetConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Draws `count` samples; identical arguments give identical data.
///
/// # Safety
/// `cfg` must be a live handle and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_generate(
    cfg: *const CfnetConfig,
    count: usize,
    seed: u64,
    out: *mut *mut CfnetDataset,
) -> CfnetStatus {
    guard(|| {
        let cfg = borrow(cfg, "config")?;
        let ds = gen_dataset(&cfg.inner, count, seed)?;
        write_out(out, CfnetDataset { inner: ds })
    })
}

/// Loads a dataset directory written by `cfnet gen-data`.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_load(dir: *const c_char, out: *mut *mut CfnetDataset) -> CfnetStatus {
    guard(|| {
        let ds = cfnet::io::load_dataset(Path::new(text(dir, "dir")?))?;
        write_out(out, CfnetDataset { inner: ds })
    })
}

/// Number of samples.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_len(ds: *const CfnetDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.samples.len())
}

/// Shapes of a sample's observation (`2T × N·L`) and channel (`2M × N·L`).
///
/// # Safety
/// `ds` must be a live handle; `obs` and `truth` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_shapes(
    ds: *const CfnetDataset,
    obs: *mut CfnetShape,
    truth: *mut CfnetShape,
) -> CfnetStatus {
    guard(|| {
        let cfg = &borrow(ds, "dataset")?.inner.config;
        if obs.is_null() || truth.is_null() {
            return Err(fail(CfnetStatus::NullPointer, "shape output is null"));
        }
        *obs = CfnetShape { rows: 2 * cfg.t, cols: cfg.concat_cols() };
        *truth = CfnetShape { rows: cfg.lifted_rows(), cols: cfg.concat_cols() };
        Ok(())
    })
}

/// Copies the observation of sample `index` into `out`.
///
/// # Safety
/// `ds` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_observation(
    ds: *const CfnetDataset,
    index: usize,
    out: *mut f64,
    len: usize,
) -> CfnetStatus {
    guard(|| {
        let s = sample(&borrow(ds, "dataset")?.inner, index)?;
        copy_into(s.lifted_obs.mat.view(), out, len)
    })
}

/// Copies the true channel of sample `index` into `out`.
///
/// # Safety
/// `ds` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_truth(ds: *const CfnetDataset, index: usize, out: *mut f64, len: usize) -> CfnetStatus {
    guard(|| {
        let s = sample(&borrow(ds, "dataset")?.inner, index)?;
        copy_into(s.lifted_truth.mat.view(), out, len)
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfnet_dataset_free(ds: *mut CfnetDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Untrained estimator of `scheme` for the sensing matrix of `ds`. A
/// non-positive `lambda` is replaced by the value derived from the data.
///
/// # Safety
/// `scheme` must be a NUL-terminated string, `ds` a live handle and `out`
/// valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_model_untrained(
    scheme: *const c_char,
    ds: *const CfnetDataset,
    lambda: f64,
    out: *mut *mut CfnetModel,
) -> CfnetStatus {
    guard(|| {
        let scheme: SchemeName = text(scheme, "scheme")?.parse()?;
        let ds = &borrow(ds, "dataset")?.inner;
        let phi = ds.phi_lifted.view();
        let lambda = if lambda > 0.0 {
            lambda
        } else {
            default_lambda(phi, ds.samples.iter().map(|s| s.lifted_obs.mat.view()))?
        };
        let model = SchemeModel::untrained(scheme, &ds.config, phi, lambda)?;
        write_out(out, CfnetModel { scheme, inner: model })
    })
}

/// Loads the checkpoint of `scheme` from `dir`. When `ds` is non-null the
/// checkpoint must have been trained on its sensing matrix.
///
/// # Safety
/// `dir` and `scheme` must be NUL-terminated strings, `ds` null or a live
/// handle, and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_model_load(
    dir: *const c_char,
    scheme: *const c_char,
    ds: *const CfnetDataset,
    out: *mut *mut CfnetModel,
) -> CfnetStatus {
    guard(|| {
        let dir = Path::new(text(dir, "dir")?);
        let scheme: SchemeName = text(scheme, "scheme")?.parse()?;
        let ids = ds.as_ref().map(|d| cfnet::io::ArtifactIds::of(&d.inner));
        let model = cfnet::io::load_checkpoint(dir, scheme, ids.as_ref())?.ok_or_else(|| {
            fail(CfnetStatus::NotFound, format!("no complete {scheme} checkpoint in {}", dir.display()))
        })?;
        write_out(out, CfnetModel { scheme, inner: model })
    })
}

/// Estimates the lifted channel (`2M × N·L`) from a lifted observation
/// (`2T × N·L`), both row-major, using the sensing matrix of `ds`.
///
/// # Safety
/// `model` and `ds` must be live handles, `obs` valid for `obs_len` doubles
/// and `out` valid for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfnet_model_estimate(
    model: *const CfnetModel,
    ds: *const CfnetDataset,
    obs: *const f64,
    obs_len: usize,
    out: *mut f64,
    out_len: usize,
) -> CfnetStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let ds = &borrow(ds, "dataset")?.inner;
        let cfg = &ds.config;
        let shape = (2 * cfg.t, cfg.concat_cols());
        if obs.is_null() {
            return Err(fail(CfnetStatus::NullPointer, "observation is null"));
        }
        if obs_len != shape.0 * shape.1 {
            return Err(fail(
                CfnetStatus::ShapeMismatch,
                format!("observation holds {obs_len} values, expected {}x{}", shape.0, shape.1),
            ));
        }
        let obs = ArrayView2::from_shape(shape.strides((shape.1, 1)), std::slice::from_raw_parts(obs, obs_len))
            .map_err(|e| fail(CfnetStatus::ShapeMismatch, e.to_string()))?;
        let est = model.inner.estimate(ds.phi_lifted.view(), obs, cfg.n)?;
        copy_into(est.view(), out, out_len)
    })
}

/// Test NMSE in dB of `model` over every sample of `ds`.
///
/// # Safety
/// `model` and `ds` must be live handles and `nmse_db` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn cfnet_model_evaluate(
    model: *const CfnetModel,
    ds: *const CfnetDataset,
    variant: CfnetNmseVariant,
    nmse_db: *mut f64,
) -> CfnetStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let ds = &borrow(ds, "dataset")?.inner;
        if nmse_db.is_null() {
            return Err(fail(CfnetStatus::NullPointer, "nmse_db is null"));
        }
        let variant = match variant {
            CfnetNmseVariant::Unsquared => NmseVariant::PaperUnsquared,
            CfnetNmseVariant::Squared => NmseVariant::Squared,
        };
        *nmse_db = evaluate(model.scheme, &model.inner, ds, variant)?.nmse.nmse_db;
        Ok(())
    })
}

/// Number of unrolled layers (or baseline iterations).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfnet_model_layers(model: *const CfnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.layer_count())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfnet_model_free(model: *mut CfnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Row-wise soft thresholding of a row-major `rows × cols` matrix:
/// each row is scaled by `max(0, 1 − tau/‖row‖)`. `out` may alias `input`.
///
/// # Safety
/// `input` and `out` must be valid for `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn cfnet_row_soft_threshold(
    input: *const f64,
    rows: usize,
    cols: usize,
    tau: f64,
    out: *mut f64,
) -> CfnetStatus {
    guard(|| {
        if input.is_null() || out.is_null() {
            return Err(fail(CfnetStatus::NullPointer, "matrix buffer is null"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(CfnetStatus::InvalidArgument, "rows * cols overflows"))?;
        let src = ndarray::Array2::from_shape_vec((rows, cols), std::slice::from_raw_parts(input, n).to_vec())
            .map_err(|e| fail(CfnetStatus::ShapeMismatch, e.to_string()))?;
        let shrunk = cfnet::threshold::soft_row_threshold(&cfnet::threshold::RowMatrix::new(src), tau)?;
        copy_into(shrunk.mat.view(), out, n)
    })
}
