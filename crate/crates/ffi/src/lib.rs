//! C interface to the fallchain library.
//!
//! Every function returns an [`FcStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be read with
//! [`fc_last_error_message`]. Models are opaque handles that must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fallchain::fedsim::{fedavg, ClientUpdate};
use fallchain::fingerprint::dtw;
use fallchain::locmodel::{LocError, LocModel};
use fallchain::mission::{combined_reliability, serial_reliability, Reliability, ReliabilityModel};
use fallchain::nn::{Layout, ModelParams, PARAMS_VERSION};
use fallchain::vision::{ap50, iou, BBox, SceneClassifier, SceneFeatures, FEATURE_LEN};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFitted = 3,
    Io = 4,
    Parse = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

/// Centre-format box in normalized image coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<FcBox> for BBox {
    fn from(b: FcBox) -> Self {
        BBox { cx: b.cx, cy: b.cy, w: b.w, h: b.h }
    }
}

/// Opaque localization model.
pub struct FcLocModel {
    inner: LocModel,
}

/// Opaque fallen / not-fallen scene classifier.
pub struct FcSceneClassifier {
    inner: SceneClassifier,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(FcStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self(FcStatus::InvalidArgument, msg.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FcStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (FcStatus::Ok, String::new()),
        Ok(Err(Failure(status, message))) => (status, message),
        Err(_) => (FcStatus::Internal, "panic inside fallchain".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
    status
}

fn out<'a, T>(ptr: *mut T) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes either null or a valid, writable T.
    unsafe { ptr.as_mut() }.ok_or(Failure(FcStatus::NullPointer, "null output pointer".into()))
}

fn slice<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure(FcStatus::NullPointer, "null input array".into()));
    }
    // SAFETY: caller guarantees `len` readable elements at `ptr`.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, Failure> {
    if ptr.is_null() {
        return Err(Failure(FcStatus::NullPointer, "null path".into()));
    }
    // SAFETY: caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Failure::invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn write_reliability(r: Reliability, failure: *mut f64, accuracy_pct: *mut f64) -> Result<(), Failure> {
    *out(failure)? = r.failure;
    *out(accuracy_pct)? = r.accuracy_pct;
    Ok(())
}

/// Length in bytes of the last error message on this thread (0 if none).
#[no_mangle]
pub extern "C" fn fc_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copy the last error message, NUL-terminated and truncated to fit, into
/// `buf`. Returns the number of bytes written excluding the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null with `cap` 0.
#[no_mangle]
pub unsafe extern "C" fn fc_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(cap - 1);
        // SAFETY: n + 1 <= cap bytes are writable at buf.
        unsafe {
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        n
    })
}

/// Probability that all three stages fail on the same event, and the
/// matching accuracy in percent.
#[no_mangle]
pub extern "C" fn fc_combined_reliability(
    detect_fail: f64,
    nav_fail: f64,
    vision_fail: f64,
    failure: *mut f64,
    accuracy_pct: *mut f64,
) -> FcStatus {
    guard(|| {
        let model = ReliabilityModel { detect_fail, nav_fail, vision_fail };
        let r = combined_reliability(&model).map_err(|e| Failure::invalid(e.to_string()))?;
        write_reliability(r, failure, accuracy_pct)
    })
}

/// Alternative composition where any single stage failure loses the event.
#[no_mangle]
pub extern "C" fn fc_serial_reliability(
    detect_fail: f64,
    nav_fail: f64,
    vision_fail: f64,
    failure: *mut f64,
    accuracy_pct: *mut f64,
) -> FcStatus {
    guard(|| {
        let model = ReliabilityModel { detect_fail, nav_fail, vision_fail };
        let r = serial_reliability(&model).map_err(|e| Failure::invalid(e.to_string()))?;
        write_reliability(r, failure, accuracy_pct)
    })
}

#[no_mangle]
pub extern "C" fn fc_iou(a: FcBox, b: FcBox, result: *mut f64) -> FcStatus {
    guard(|| {
        let (a, b) = (BBox::from(a), BBox::from(b));
        a.validate().map_err(|e| Failure::invalid(e.to_string()))?;
        b.validate().map_err(|e| Failure::invalid(e.to_string()))?;
        *out(result)? = iou(&a, &b);
        Ok(())
    })
}

/// All-points AP at IoU 0.5 for one class in one image.
///
/// # Safety
/// `boxes` and `scores` hold `n` elements, `truths` holds `m`.
#[no_mangle]
pub unsafe extern "C" fn fc_ap50(
    boxes: *const FcBox,
    scores: *const f64,
    n: usize,
    truths: *const FcBox,
    m: usize,
    result: *mut f64,
) -> FcStatus {
    guard(|| {
        let dets: Vec<(BBox, f64)> = slice(boxes, n)?
            .iter()
            .zip(slice(scores, n)?)
            .map(|(b, s)| (BBox::from(*b), *s))
            .collect();
        let truths: Vec<BBox> = slice(truths, m)?.iter().map(|b| BBox::from(*b)).collect();
        *out(result)? = ap50(&dets, &truths).ap;
        Ok(())
    })
}

/// DTW alignment cost between two timestamp sequences.
///
/// # Safety
/// `a` holds `n` values and `b` holds `m`.
#[no_mangle]
pub unsafe extern "C" fn fc_dtw_cost(a: *const f64, n: usize, b: *const f64, m: usize, result: *mut f64) -> FcStatus {
    guard(|| {
        let alignment = dtw(slice(a, n)?, slice(b, m)?).map_err(|e| Failure::invalid(e.to_string()))?;
        *out(result)? = alignment.cost;
        Ok(())
    })
}

/// Weighted parameter average over `clients` flat vectors of length `len`,
/// stored back to back in `params`.
///
/// # Safety
/// `params` holds `clients * len` values, `weights` holds `clients` and
/// `result` has room for `len`.
#[no_mangle]
pub unsafe extern "C" fn fc_fedavg(
    params: *const f64,
    weights: *const usize,
    clients: usize,
    len: usize,
    result: *mut f64,
) -> FcStatus {
    guard(|| {
        let total = clients.checked_mul(len).ok_or_else(|| Failure::invalid("size overflow"))?;
        let values = slice(params, total)?;
        let weights = slice(weights, clients)?;
        let mut layout = Layout::default();
        layout.push("theta", &[len]);
        let updates: Vec<ClientUpdate> = (0..clients)
            .map(|i| ClientUpdate {
                client_id: i as u32,
                params: ModelParams {
                    version: PARAMS_VERSION,
                    layout: layout.clone(),
                    values: values[i * len..(i + 1) * len].to_vec(),
                },
                weight: weights[i],
                local_loss: 0.0,
            })
            .collect();
        let avg = fedavg(&updates).map_err(|e| Failure::invalid(e.to_string()))?;
        if len > 0 {
            if result.is_null() {
                return Err(Failure(FcStatus::NullPointer, "null output pointer".into()));
            }
            // SAFETY: caller provides `len` writable values at `result`.
            unsafe { std::slice::from_raw_parts_mut(result, len) }.copy_from_slice(&avg.values);
        }
        Ok(())
    })
}

fn loc_failure(e: LocError) -> Failure {
    let status = match &e {
        LocError::NotFitted => FcStatus::NotFitted,
        LocError::Io(_) => FcStatus::Io,
        LocError::Json(_) | LocError::ArtifactVersion(_) => FcStatus::Parse,
        _ => FcStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

/// Load a localization model saved by `fallchain train-loc`.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `model` is writable.
#[no_mangle]
pub unsafe extern "C" fn fc_loc_model_load(path: *const c_char, model: *mut *mut FcLocModel) -> FcStatus {
    guard(|| {
        let slot = out(model)?;
        let inner = LocModel::load(path_arg(path)?).map_err(loc_failure)?;
        *slot = Box::into_raw(Box::new(FcLocModel { inner }));
        Ok(())
    })
}

/// Number of RSSI values `fc_loc_model_predict` expects.
///
/// # Safety
/// `model` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_loc_model_anchor_count(model: *const FcLocModel, count: *mut usize) -> FcStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let m = unsafe { model.as_ref() }.ok_or(Failure(FcStatus::NullPointer, "null model".into()))?;
        *out(count)? = m.inner.anchors.len();
        Ok(())
    })
}

/// Predict `(x, y)` into `xy[0..2]` from `n` RSSI values in anchor order.
///
/// # Safety
/// `model` is a live handle, `rssi` holds `n` values, `xy` has room for 2.
#[no_mangle]
pub unsafe extern "C" fn fc_loc_model_predict(
    model: *const FcLocModel,
    rssi: *const f64,
    n: usize,
    xy: *mut f64,
) -> FcStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let m = unsafe { model.as_ref() }.ok_or(Failure(FcStatus::NullPointer, "null model".into()))?;
        let values = slice(rssi, n)?;
        if n != m.inner.anchors.len() {
            return Err(Failure::invalid(format!("expected {} RSSI values, got {n}", m.inner.anchors.len())));
        }
        let p = m.inner.predict(values).map_err(loc_failure)?;
        if xy.is_null() {
            return Err(Failure(FcStatus::NullPointer, "null output pointer".into()));
        }
        // SAFETY: caller provides two writable values.
        unsafe { std::slice::from_raw_parts_mut(xy, 2) }.copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from `fc_loc_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_loc_model_free(model: *mut FcLocModel) {
    if !model.is_null() {
        // SAFETY: the handle came from Box::into_raw.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Load a scene classifier saved by `fallchain train-vision`.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `model` is writable.
#[no_mangle]
pub unsafe extern "C" fn fc_scene_classifier_load(path: *const c_char, model: *mut *mut FcSceneClassifier) -> FcStatus {
    guard(|| {
        let slot = out(model)?;
        let inner = SceneClassifier::load(path_arg(path)?).map_err(|e| {
            let status = match e {
                fallchain::vision::VisionError::Io(_) => FcStatus::Io,
                _ => FcStatus::Parse,
            };
            Failure(status, e.to_string())
        })?;
        *slot = Box::into_raw(Box::new(FcSceneClassifier { inner }));
        Ok(())
    })
}

/// Probability that the scene shows a fallen person, from the 13 scene
/// features.
///
/// # Safety
/// `model` is a live handle and `features` holds `n` values.
#[no_mangle]
pub unsafe extern "C" fn fc_scene_classifier_predict(
    model: *const FcSceneClassifier,
    features: *const f64,
    n: usize,
    probability: *mut f64,
) -> FcStatus {
    guard(|| {
        // SAFETY: caller passes a live handle or null.
        let m = unsafe { model.as_ref() }.ok_or(Failure(FcStatus::NullPointer, "null model".into()))?;
        let values = slice(features, n)?;
        let f: SceneFeatures = values
            .try_into()
            .map_err(|_| Failure::invalid(format!("expected {FEATURE_LEN} features, got {n}")))?;
        *out(probability)? = m.inner.predict_proba(&f);
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from `fc_scene_classifier_load` not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn fc_scene_classifier_free(model: *mut FcSceneClassifier) {
    if !model.is_null() {
        // SAFETY: the handle came from Box::into_raw.
        drop(unsafe { Box::from_raw(model) });
    }
}
