//! C ABI for gradex.
//!
//! Every fallible function returns a [`GxStatus`]. On failure a message is
//! kept per thread and can be read with [`gx_last_error_message`]. Models are
//! opaque [`GxModel`] handles released with [`gx_model_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gradex::attribution::Method;
use gradex::autonet::{load_model, Model};
use gradex::gradual::contribution_matrix;
use gradex::pipeline::{explain, MethodSpec};
use gradex::tensor::Tensor;
use gradex::Error;
use libc::{c_char, c_int, size_t};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GxStatus {
    Ok = 0,
    InvalidArgument = 1,
    Shape = 2,
    Parse = 3,
    Validation = 4,
    Training = 5,
    EmptyCohort = 6,
    Io = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Base attribution method.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GxMethod {
    GradCam = 0,
    Ebp = 1,
    ContrastiveEbp = 2,
}

impl From<GxMethod> for Method {
    fn from(m: GxMethod) -> Self {
        match m {
            GxMethod::GradCam => Method::GradCam,
            GxMethod::Ebp => Method::Ebp,
            GxMethod::ContrastiveEbp => Method::ContrastiveEbp,
        }
    }
}

/// Opaque model handle.
pub struct GxModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: GxStatus, msg: impl Into<String>) -> GxStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> GxStatus {
    match e {
        Error::InvalidArgument(_) => GxStatus::InvalidArgument,
        Error::Shape(_) => GxStatus::Shape,
        Error::Parse { .. } => GxStatus::Parse,
        Error::Validation(_) => GxStatus::Validation,
        Error::Training { .. } => GxStatus::Training,
        Error::EmptyCohort { .. } => GxStatus::EmptyCohort,
        Error::Io(_) => GxStatus::Io,
    }
}

fn guarded(f: impl FnOnce() -> Result<(), GxStatus>) -> GxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GxStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(GxStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: gradex::Result<T>) -> Result<T, GxStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a weight file. On success `*out` receives a handle to free with
/// [`gx_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gx_model_load(path: *const c_char, out: *mut *mut GxModel) -> GxStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(GxStatus::NullPointer, "null argument"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(GxStatus::InvalidArgument, "path is not UTF-8"))?;
        let model = lift(load_model(path))?;
        *out = Box::into_raw(Box::new(GxModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`gx_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gx_model_free(model: *mut GxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gx_model_input_dims(
    model: *const GxModel,
    channels: *mut size_t,
    height: *mut size_t,
    width: *mut size_t,
) -> GxStatus {
    guarded(|| {
        if model.is_null() || channels.is_null() || height.is_null() || width.is_null() {
            return Err(fail(GxStatus::NullPointer, "null argument"));
        }
        let [c, h, w] = (*model).inner.input_dims();
        *channels = c;
        *height = h;
        *width = w;
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gx_model_num_classes(model: *const GxModel, out: *mut size_t) -> GxStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return Err(fail(GxStatus::NullPointer, "null argument"));
        }
        *out = (*model).inner.num_classes();
        Ok(())
    })
}

/// Explains one image given as `C*H*W` values in planar order.
///
/// `class_idx < 0` explains the predicted class. The `H*W` input-resolution
/// map is written row-major to `out_map`. `predicted` and `confidence` may be
/// NULL.
///
/// # Safety
/// `image` must hold `image_len` values and `out_map` room for `out_len`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gx_explain(
    model: *const GxModel,
    image: *const f64,
    image_len: size_t,
    method: GxMethod,
    gradual: bool,
    class_idx: c_int,
    out_map: *mut f64,
    out_len: size_t,
    predicted: *mut size_t,
    confidence: *mut f64,
) -> GxStatus {
    guarded(|| {
        if model.is_null() || image.is_null() || out_map.is_null() {
            return Err(fail(GxStatus::NullPointer, "null argument"));
        }
        let model = &(*model).inner;
        let [c, h, w] = model.input_dims();
        if image_len != c * h * w {
            return Err(fail(
                GxStatus::Shape,
                format!("image has {image_len} values, model expects {}", c * h * w),
            ));
        }
        if out_len < h * w {
            return Err(fail(
                GxStatus::BufferTooSmall,
                format!("output buffer holds {out_len}, map needs {}", h * w),
            ));
        }
        let data = std::slice::from_raw_parts(image, image_len).to_vec();
        let tensor = lift(Tensor::from_vec(&[c, h, w], data))?;
        let class = if class_idx < 0 {
            None
        } else {
            let k = class_idx as usize;
            if k >= model.num_classes() {
                return Err(fail(GxStatus::InvalidArgument, format!("class {k} out of range")));
            }
            Some(k)
        };
        let e = lift(explain(model, &tensor, MethodSpec::new(method.into(), gradual), class, None))?;
        std::slice::from_raw_parts_mut(out_map, h * w).copy_from_slice(e.map.data());
        if !predicted.is_null() {
            *predicted = e.predicted;
        }
        if !confidence.is_null() {
            *confidence = e.confidence;
        }
        Ok(())
    })
}

/// Channel-mean of a non-negative `[channels, height, width]` activation,
/// divided by its maximum, written as `height*width` values.
///
/// # Safety
/// `activation` must hold `channels*height*width` values and `out` room for
/// `out_len`.
#[no_mangle]
pub unsafe extern "C" fn gx_contribution_matrix(
    activation: *const f64,
    channels: size_t,
    height: size_t,
    width: size_t,
    out: *mut f64,
    out_len: size_t,
) -> GxStatus {
    guarded(|| {
        if activation.is_null() || out.is_null() {
            return Err(fail(GxStatus::NullPointer, "null argument"));
        }
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| fail(GxStatus::InvalidArgument, "dimensions overflow"))?;
        if out_len < height * width {
            return Err(fail(GxStatus::BufferTooSmall, "output buffer too small"));
        }
        let data = std::slice::from_raw_parts(activation, n).to_vec();
        let t = lift(Tensor::from_vec(&[channels, height, width], data))?;
        let cm = lift(contribution_matrix(&t))?;
        std::slice::from_raw_parts_mut(out, height * width).copy_from_slice(cm.m.data());
        Ok(())
    })
}
