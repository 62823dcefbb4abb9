//! C ABI over the colorization engine.
//!
//! Every entry point returns an [`LccStatus`]; on failure a message for the
//! calling thread is available from [`lcc_last_error`]. Models are opaque
//! handles created by [`lcc_model_load`] and released with
//! [`lcc_model_free`]. Images are tightly packed 8-bit RGB, row-major.
//! Panics never cross the boundary; they surface as `LCC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lassocolor::colorspace::{lab_pixel_to_rgb, rgb_pixel_to_lab, RgbImage};
use lassocolor::interaction::{ColorHint, HintSet, HintSetJson, Lasso, RectLasso};
use lassocolor::model::Model;
use lassocolor::{checkpoint, metrics, pipeline, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A color point. When `has_lasso` is nonzero the inclusive rectangle
/// `(y0, x0)..=(y1, x1)` is its lasso; otherwise the pre-defined square is
/// used.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LccHint {
    pub y: u32,
    pub x: u32,
    pub a: f32,
    pub b: f32,
    pub has_lasso: i32,
    pub y0: u32,
    pub x0: u32,
    pub y1: u32,
    pub x1: u32,
}

/// Opaque model handle.
pub struct LccModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LccStatus {
    match e {
        Error::Io { .. } => LccStatus::Io,
        Error::Checkpoint(_) => LccStatus::Checkpoint,
        Error::Numeric(_) => LccStatus::Numeric,
        _ => LccStatus::InvalidArgument,
    }
}

type Outcome = Result<(), (LccStatus, String)>;

fn fail(status: LccStatus, msg: impl Into<String>) -> Outcome {
    Err((status, msg.into()))
}

fn lift<T>(r: lassocolor::Result<T>) -> Result<T, (LccStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn guard(f: impl FnOnce() -> Outcome) -> LccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LccStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LccStatus::Panic
        }
    }
}

fn image_from(rgb: *const u8, width: u32, height: u32) -> Result<RgbImage, (LccStatus, String)> {
    if rgb.is_null() {
        return Err((LccStatus::NullPointer, "rgb is null".into()));
    }
    if width == 0 || height == 0 {
        return Err((LccStatus::InvalidArgument, "image has zero size".into()));
    }
    let len = width as usize * height as usize * 3;
    // SAFETY: caller guarantees `rgb` points at width*height*3 readable bytes.
    let data = unsafe { std::slice::from_raw_parts(rgb, len) }.to_vec();
    lift(RgbImage::new(width as usize, height as usize, data))
}

fn write_image(img: &RgbImage, out: *mut u8, out_len: usize) -> Outcome {
    if out.is_null() {
        return fail(LccStatus::NullPointer, "out_rgb is null");
    }
    if out_len < img.data.len() {
        return fail(
            LccStatus::BufferTooSmall,
            format!("output needs {} bytes, buffer has {out_len}", img.data.len()),
        );
    }
    // SAFETY: `out` has at least `out_len >= img.data.len()` writable bytes.
    unsafe { ptr::copy_nonoverlapping(img.data.as_ptr(), out, img.data.len()) };
    Ok(())
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcc_model_load(path: *const c_char, out: *mut *mut LccModel) -> LccStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(LccStatus::NullPointer, "path and out must be non-null");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(LccStatus::InvalidArgument, "path is not UTF-8"),
        };
        let model = lift(checkpoint::load(path))?;
        *out = Box::into_raw(Box::new(LccModel { model }));
        Ok(())
    })
}

/// Releases a handle from [`lcc_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lcc_model_free(model: *mut LccModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model working resolution.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lcc_model_input_size(model: *const LccModel, width: *mut u32, height: *mut u32) -> LccStatus {
    guard(|| {
        if model.is_null() || width.is_null() || height.is_null() {
            return fail(LccStatus::NullPointer, "null argument");
        }
        let cfg = &(*model).model.config;
        *width = cfg.width as u32;
        *height = cfg.height as u32;
        Ok(())
    })
}

/// Colorizes a `width×height` RGB image with `n_hints` hints (coordinates
/// in the image frame). `r` scales the pre-defined lasso; pass 1. The
/// result (`width*height*3` bytes) is written to `out_rgb`.
///
/// # Safety
/// `rgb` must hold `width*height*3` bytes, `hints` `n_hints` entries (may
/// be null when zero) and `out_rgb` `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lcc_colorize(
    model: *const LccModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    hints: *const LccHint,
    n_hints: usize,
    r: f32,
    out_rgb: *mut u8,
    out_len: usize,
) -> LccStatus {
    guard(|| {
        if model.is_null() {
            return fail(LccStatus::NullPointer, "model is null");
        }
        if n_hints > 0 && hints.is_null() {
            return fail(LccStatus::NullPointer, "hints is null");
        }
        let img = image_from(rgb, width, height)?;
        let raw = if n_hints == 0 { &[][..] } else { std::slice::from_raw_parts(hints, n_hints) };
        let mut set = HintSet::new();
        for h in raw {
            let lasso = (h.has_lasso != 0).then_some({
                Lasso::Rect(RectLasso {
                    y0: h.y0 as usize,
                    x0: h.x0 as usize,
                    y1: h.y1 as usize,
                    x1: h.x1 as usize,
                })
            });
            set.push(
                ColorHint {
                    y: h.y as usize,
                    x: h.x as usize,
                    a: h.a,
                    b: h.b,
                },
                lasso,
            );
        }
        let out = lift(pipeline::colorize(&(*model).model, &img, &set, r))?;
        write_image(&out.image, out_rgb, out_len)
    })
}

/// Same as [`lcc_colorize`] with hints given as HintSet JSON (supports
/// mask lassos).
///
/// # Safety
/// As for [`lcc_colorize`]; `hints_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lcc_colorize_json(
    model: *const LccModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    hints_json: *const c_char,
    r: f32,
    out_rgb: *mut u8,
    out_len: usize,
) -> LccStatus {
    guard(|| {
        if model.is_null() || hints_json.is_null() {
            return fail(LccStatus::NullPointer, "null argument");
        }
        let img = image_from(rgb, width, height)?;
        let json: HintSetJson = match serde_json::from_slice(CStr::from_ptr(hints_json).to_bytes()) {
            Ok(j) => j,
            Err(e) => return fail(LccStatus::InvalidArgument, format!("hints: {e}")),
        };
        let set = lift(json.into_hint_set(img.width, img.height))?;
        let out = lift(pipeline::colorize(&(*model).model, &img, &set, r))?;
        write_image(&out.image, out_rgb, out_len)
    })
}

/// sRGB (3 bytes per pixel) to interleaved CIELab floats.
///
/// # Safety
/// `rgb` must hold `3*n_pixels` bytes and `lab` `3*n_pixels` floats.
#[no_mangle]
pub unsafe extern "C" fn lcc_rgb_to_lab(rgb: *const u8, n_pixels: usize, lab: *mut f32) -> LccStatus {
    guard(|| {
        if n_pixels == 0 {
            return Ok(());
        }
        if rgb.is_null() || lab.is_null() {
            return fail(LccStatus::NullPointer, "null buffer");
        }
        let src = std::slice::from_raw_parts(rgb, 3 * n_pixels);
        let dst = std::slice::from_raw_parts_mut(lab, 3 * n_pixels);
        for (s, d) in src.chunks_exact(3).zip(dst.chunks_exact_mut(3)) {
            let v = rgb_pixel_to_lab([s[0], s[1], s[2]]);
            d.copy_from_slice(&[v[0] as f32, v[1] as f32, v[2] as f32]);
        }
        Ok(())
    })
}

/// Interleaved CIELab floats to sRGB bytes (rounded, clamped).
///
/// # Safety
/// `lab` must hold `3*n_pixels` floats and `rgb` `3*n_pixels` bytes.
#[no_mangle]
pub unsafe extern "C" fn lcc_lab_to_rgb(lab: *const f32, n_pixels: usize, rgb: *mut u8) -> LccStatus {
    guard(|| {
        if n_pixels == 0 {
            return Ok(());
        }
        if rgb.is_null() || lab.is_null() {
            return fail(LccStatus::NullPointer, "null buffer");
        }
        let src = std::slice::from_raw_parts(lab, 3 * n_pixels);
        let dst = std::slice::from_raw_parts_mut(rgb, 3 * n_pixels);
        for (s, d) in src.chunks_exact(3).zip(dst.chunks_exact_mut(3)) {
            if s.iter().any(|v| !v.is_finite()) {
                return fail(LccStatus::InvalidArgument, "non-finite Lab value");
            }
            d.copy_from_slice(&lab_pixel_to_rgb([s[0] as f64, s[1] as f64, s[2] as f64]));
        }
        Ok(())
    })
}

/// PSNR in dB between two RGB images; identical images give 99 with
/// `*exact = 1`.
///
/// # Safety
/// Both images must hold `width*height*3` bytes; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn lcc_psnr(
    a: *const u8,
    b: *const u8,
    width: u32,
    height: u32,
    db: *mut f64,
    exact: *mut i32,
) -> LccStatus {
    guard(|| {
        if db.is_null() || exact.is_null() {
            return fail(LccStatus::NullPointer, "null output");
        }
        let ia = image_from(a, width, height)?;
        let ib = image_from(b, width, height)?;
        let p = lift(metrics::psnr(&ia, &ib))?;
        *db = p.db;
        *exact = p.exact_match as i32;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn lcc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lcc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
