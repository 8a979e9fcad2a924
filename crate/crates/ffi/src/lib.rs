//! C ABI over the segmenter, clip store and perturbation checkpoints.
//!
//! Objects cross the boundary as opaque handles created by `*_load` /
//! `*_generate` and released with the matching `*_free`. Every fallible call
//! returns a [`UapStatus`]; on failure the message is available from
//! [`uap_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use uapsam::attack::{apply, load_perturbations, Perturbation};
use uapsam::mask::Mask;
use uapsam::prompts::Prompt;
use uapsam::segmodel::ModelParams;
use uapsam::synthclip::{generate_clip, load_clip, ClipSpec, VideoClip};
use uapsam::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UapStatus {
    Ok = 0,
    NullArgument = 1,
    /// Invalid input or configuration (bad path, malformed file, bad shape).
    InvalidInput = 2,
    /// Failure during computation.
    Runtime = 3,
    /// A panic was caught at the boundary.
    Panic = 4,
}

/// Trained segmenter parameters.
pub struct UapModel(ModelParams);

/// Video clip with ground-truth masks.
pub struct UapClip(VideoClip);

/// One or more perturbations loaded from a checkpoint.
pub struct UapPerturbation(Vec<Perturbation>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UapStatus {
    if e.is_config() || matches!(e, Error::Shape(_)) {
        UapStatus::InvalidInput
    } else {
        UapStatus::Runtime
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UapStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null argument: {what}"));
            UapStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            UapStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Config(format!("{what} is not valid UTF-8"))))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uap_model_load(path: *const c_char, out: *mut *mut UapModel) -> UapStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        emit(out, UapModel(ModelParams::load(&p)?))
    })
}

/// # Safety
/// `model` must come from [`uap_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uap_model_free(model: *mut UapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a clip directory (`meta.json`, `frames.bin`, `masks.bin`).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uap_clip_load(dir: *const c_char, out: *mut *mut UapClip) -> UapStatus {
    guard(|| {
        let p = path_arg(dir, "dir")?;
        emit(out, UapClip(load_clip(&p)?))
    })
}

/// Generates a random synthetic clip from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uap_clip_generate(
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    out: *mut *mut UapClip,
) -> UapStatus {
    guard(|| {
        let spec = ClipSpec::random(seed, frames, height, width);
        emit(out, UapClip(generate_clip(&spec)?))
    })
}

/// Writes frame count, height and width of `clip`. Any out pointer may be null.
///
/// # Safety
/// `clip` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uap_clip_dims(
    clip: *const UapClip,
    frames: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> UapStatus {
    guard(|| {
        let c = &deref(clip, "clip")?.0;
        for (p, v) in [(frames, c.len()), (height, c.height()), (width, c.width())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the ground-truth masks (frame-major, 0 or 1 per pixel) into `out`,
/// which must hold `frames * height * width` bytes.
///
/// # Safety
/// `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn uap_clip_masks(clip: *const UapClip, out: *mut u8, len: usize) -> UapStatus {
    guard(|| {
        let c = &deref(clip, "clip")?.0;
        write_masks(c.masks.iter(), out, len)
    })
}

/// # Safety
/// `clip` must be a live handle and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uap_clip_free(clip: *mut UapClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uap_perturbation_load(path: *const c_char, out: *mut *mut UapPerturbation) -> UapStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        emit(out, UapPerturbation(load_perturbations(&p)?))
    })
}

/// # Safety
/// `pert` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uap_perturbation_epsilon(pert: *const UapPerturbation, out: *mut f64) -> UapStatus {
    guard(|| {
        let p = &deref(pert, "pert")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = p[0].epsilon;
        Ok(())
    })
}

/// # Safety
/// `pert` must be a live handle and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uap_perturbation_free(pert: *mut UapPerturbation) {
    if !pert.is_null() {
        drop(Box::from_raw(pert));
    }
}

/// Adds entry `index` of `pert` to `clip`, clamped to `[0, 1]`, producing a
/// new clip handle.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uap_apply_perturbation(
    clip: *const UapClip,
    pert: *const UapPerturbation,
    index: usize,
    out: *mut *mut UapClip,
) -> UapStatus {
    guard(|| {
        let c = &deref(clip, "clip")?.0;
        let p = &deref(pert, "pert")?.0;
        let entry = p.get(index).ok_or_else(|| {
            Failure::Lib(Error::Config(format!("perturbation index {index} out of {} entries", p.len())))
        })?;
        emit(out, UapClip(apply(c, entry)?))
    })
}

/// Segments `clip` with a point prompt at `(x, y)` on frame 0 and writes
/// the foreground masks (frame-major, 0 or 1) into `out`.
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn uap_segment_video_point(
    model: *const UapModel,
    clip: *const UapClip,
    x: f64,
    y: f64,
    out: *mut u8,
    len: usize,
) -> UapStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let c = &deref(clip, "clip")?.0;
        let prompt = Prompt::Point { x, y };
        prompt.validate(c.height(), c.width())?;
        let logits = m.segment_video(&c.frames, &[prompt])?;
        let masks: Vec<Mask> = logits.iter().map(|l| l.foreground()).collect();
        write_masks(masks.iter(), out, len)
    })
}

/// Intersection over union of two `height * width` byte masks (nonzero is
/// foreground). Two empty masks give 1.
///
/// # Safety
/// `a` and `b` must each point to `height * width` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn uap_iou(a: *const u8, b: *const u8, height: usize, width: usize, out: *mut f64) -> UapStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(Failure::Null("a, b or out"));
        }
        let n = height * width;
        let (sa, sb) = (std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, n));
        let ma = Mask::from_fn(height, width, |y, x| sa[y * width + x] != 0);
        let mb = Mask::from_fn(height, width, |y, x| sb[y * width + x] != 0);
        *out = ma.iou(&mb)?;
        Ok(())
    })
}

unsafe fn write_masks<'a>(masks: impl Iterator<Item = &'a Mask>, out: *mut u8, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let masks: Vec<&Mask> = masks.collect();
    let need: usize = masks.iter().map(|m| m.data().len()).sum();
    if len < need {
        return Err(Failure::Lib(Error::Shape(format!("output buffer holds {len} bytes, need {need}"))));
    }
    let dst = std::slice::from_raw_parts_mut(out, need);
    for (d, &b) in dst.iter_mut().zip(masks.iter().flat_map(|m| m.data())) {
        *d = b as u8;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_reported() {
        let mut m: *mut UapModel = std::ptr::null_mut();
        let s = unsafe { uap_model_load(std::ptr::null(), &mut m) };
        assert_eq!(s, UapStatus::NullArgument);
        let msg = unsafe { CStr::from_ptr(uap_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("path"));
    }

    #[test]
    fn iou_of_byte_masks() {
        let a = [1u8, 1, 0, 0];
        let b = [1u8, 0, 1, 0];
        let mut v = 0.0;
        assert_eq!(unsafe { uap_iou(a.as_ptr(), b.as_ptr(), 2, 2, &mut v) }, UapStatus::Ok);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}
