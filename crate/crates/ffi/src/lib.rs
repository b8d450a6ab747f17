//! C ABI over the forecaster: load a checkpoint, predict future positions,
//! and a few kinematics helpers.
//!
//! Every fallible function returns a [`MakerStatus`]; on failure the message
//! is available from [`maker_last_error`] on the same thread until the next
//! failing call. Models are opaque handles released with
//! [`maker_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use maker_core::data::{AisRecord, TrajectorySample};
use maker_core::forecaster::{constant_velocity_baseline, prepare_input, Maker, ModelHeader};
use maker_core::kinematics::haversine_m;
use maker_core::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MakerStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Bad configuration or a missing file.
    Config = 2,
    /// Invalid input values or lengths.
    Input = 3,
    /// Malformed checkpoint or model files.
    Format = 4,
    Io = 5,
    /// A computation produced NaN or infinity.
    NonFinite = 6,
    /// Internal error; see the message.
    Internal = 7,
}

/// One AIS report. `sog` in knots, `cog` in degrees `[0, 360)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MakerRecord {
    pub timestamp: i64,
    pub lon: f64,
    pub lat: f64,
    pub sog: f64,
    pub cog: f64,
}

/// Opaque model handle.
pub struct MakerModel {
    model: Maker,
    header: ModelHeader,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap());
}

fn status_of(e: &Error) -> MakerStatus {
    match e {
        Error::Config(_) | Error::MissingFile(_) => MakerStatus::Config,
        Error::Shape(_) | Error::Input(_) | Error::Precondition(_) => MakerStatus::Input,
        Error::NonFinite(_) => MakerStatus::NonFinite,
        Error::Io { .. } => MakerStatus::Io,
        Error::Format { .. } => MakerStatus::Format,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MakerStatus, String)>) -> MakerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MakerStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MakerStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (MakerStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MakerStatus, String) {
    (MakerStatus::NullArgument, format!("`{what}` is null"))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn maker_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread (empty if none). The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn maker_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint written by `maker train`. On success `*out` owns a
/// new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maker_model_load(path: *const c_char, out: *mut *mut MakerModel) -> MakerStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (MakerStatus::Input, "path is not valid UTF-8".to_string()))?;
        let (model, header, _) = Maker::load(Path::new(path)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(MakerModel { model, header }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from [`maker_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn maker_model_free(model: *mut MakerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// History length `h` and horizon `p` the model expects.
///
/// # Safety
/// `model` must be a live handle; `h` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maker_model_dims(model: *const MakerModel, h: *mut usize, p: *mut usize) -> MakerStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if h.is_null() || p.is_null() {
            return Err(null("h/p"));
        }
        *h = m.model.cfg.h;
        *p = m.model.cfg.p;
        Ok(())
    })
}

unsafe fn sample_from(
    history: *const MakerRecord,
    h: usize,
    future_timestamps: *const i64,
    p: usize,
) -> Result<TrajectorySample, (MakerStatus, String)> {
    if history.is_null() {
        return Err(null("history"));
    }
    if future_timestamps.is_null() {
        return Err(null("future_timestamps"));
    }
    let hist = std::slice::from_raw_parts(history, h);
    let fut = std::slice::from_raw_parts(future_timestamps, p);
    let records: Vec<AisRecord> = hist
        .iter()
        .map(|r| AisRecord {
            vessel_id: String::new(),
            timestamp: r.timestamp,
            lon: r.lon,
            lat: r.lat,
            sog: r.sog,
            cog: r.cog,
        })
        .collect();
    if let Some(i) = records.iter().position(|r| !r.is_valid()) {
        return Err((MakerStatus::Input, format!("history record {i} is out of range")));
    }
    let mut times: Vec<i64> = records.iter().map(|r| r.timestamp).collect();
    times.extend_from_slice(fut);
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err((MakerStatus::Input, "timestamps must strictly increase".into()));
    }
    Ok(TrajectorySample {
        history: records,
        future_positions: vec![[0.0, 0.0]; p],
        future_timestamps: fut.to_vec(),
    })
}

/// Predicts `p` future positions from `h` history records. `out` receives
/// `2·p` doubles: lon, lat of step 1, then step 2, and so on.
///
/// # Safety
/// `history` must point to `h` records, `future_timestamps` to `p` values
/// and `out` to `2·p` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn maker_model_predict(
    model: *const MakerModel,
    history: *const MakerRecord,
    h: usize,
    future_timestamps: *const i64,
    p: usize,
    out: *mut f64,
) -> MakerStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = &m.model.cfg;
        if h != cfg.h || p != cfg.p {
            return Err((
                MakerStatus::Input,
                format!("model expects h={}, p={}; got h={h}, p={p}", cfg.h, cfg.p),
            ));
        }
        let sample = sample_from(history, h, future_timestamps, p)?;
        let input = prepare_input(&sample, cfg, m.model.lm().as_ref(), &m.header.dataset_name).map_err(core_err)?;
        let pred = m.model.predict_degrees(&[&input]).remove(0);
        if pred.iter().flatten().any(|v| !v.is_finite()) {
            return Err((MakerStatus::NonFinite, "prediction is not finite".into()));
        }
        let out = std::slice::from_raw_parts_mut(out, 2 * p);
        for (k, g) in pred.iter().enumerate() {
            out[2 * k] = g[0];
            out[2 * k + 1] = g[1];
        }
        Ok(())
    })
}

/// Constant-velocity extrapolation, same layout as [`maker_model_predict`].
///
/// # Safety
/// As for [`maker_model_predict`].
#[no_mangle]
pub unsafe extern "C" fn maker_constant_velocity(
    history: *const MakerRecord,
    h: usize,
    future_timestamps: *const i64,
    p: usize,
    out: *mut f64,
) -> MakerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if h < 2 || p == 0 {
            return Err((MakerStatus::Input, "need h ≥ 2 and p ≥ 1".into()));
        }
        let sample = sample_from(history, h, future_timestamps, p)?;
        let pred = constant_velocity_baseline(&sample).map_err(core_err)?;
        let out = std::slice::from_raw_parts_mut(out, 2 * p);
        for (k, g) in pred.iter().enumerate() {
            out[2 * k] = g[0];
            out[2 * k + 1] = g[1];
        }
        Ok(())
    })
}

/// Great-circle distance in metres between two (lon, lat) points in degrees.
#[no_mangle]
pub extern "C" fn maker_haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    haversine_m([lon1, lat1], [lon2, lat2])
}
