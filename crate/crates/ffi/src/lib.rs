//! C ABI over the storyreel core.
//!
//! Every function returns an [`SrStatus`]. On failure a message is kept per
//! thread and can be read with [`sr_last_error`]. Strings handed out by the
//! library are freed with [`sr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use storyreel::config::RunConfig;
use storyreel::metrics::background_drift;
use storyreel::metrics::encoder::EncoderKind;
use storyreel::render::{run_pipeline, RenderError};
use storyreel::schema::{parse_plan, validate_plan, CharacterSet, MovementType, ShotKind, StoryPlan, ValidationOptions};
use storyreel::transition::{classify_movement_type, derive_transition_metadata};

pub const SR_ABI_VERSION: u32 = 1;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidPlan = 4,
    InvalidArgument = 5,
    Backend = 6,
    Render = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrMovement {
    Entry = 0,
    Exit = 1,
    NoChange = 2,
    Combination = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrEncoder {
    MeanColorGrid = 0,
    ChannelHistogram = 1,
}

/// A parsed story plan.
pub struct SrPlan {
    plan: StoryPlan,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(SrStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            SrStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SrStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| Fail(SrStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn plan_ref<'a>(plan: *const SrPlan) -> Result<&'a StoryPlan, Fail> {
    plan.as_ref().map(|p| &p.plan).ok_or_else(|| null("plan"))
}

unsafe fn give_string(out: *mut *mut c_char, value: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(value).map_err(|e| Fail(SrStatus::InvalidArgument, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// ABI version of this library.
#[no_mangle]
pub extern "C" fn sr_abi_version() -> u32 {
    SR_ABI_VERSION
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Free a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a plan document into a new handle stored in `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_plan_parse(json: *const c_char, out: *mut *mut SrPlan) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let doc = text(json, "json")?;
        let plan = parse_plan(doc).map_err(|errors| {
            let lines: Vec<String> = errors.iter().map(|e| format!("{} at {}: expected {}, found {}", e.code, e.path, e.expected, e.found)).collect();
            Fail(SrStatus::Parse, lines.join("; "))
        })?;
        *out = Box::into_raw(Box::new(SrPlan { plan }));
        Ok(())
    })
}

/// Release a plan handle. NULL is ignored.
///
/// # Safety
/// `plan` must come from [`sr_plan_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sr_plan_free(plan: *mut SrPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Validate a plan. The JSON report is stored in `*report` (free with
/// [`sr_string_free`]); returns `SR_STATUS_INVALID_PLAN` when it has errors.
///
/// # Safety
/// `plan` must be a live handle; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_plan_validate(plan: *const SrPlan, strict: bool, report: *mut *mut c_char) -> SrStatus {
    guard(|| {
        let plan = plan_ref(plan)?;
        let r = validate_plan(plan, &ValidationOptions { strict });
        give_string(report, serde_json::to_string(&r).expect("report serializes"))?;
        if r.is_valid() {
            Ok(())
        } else {
            Err(Fail(SrStatus::InvalidPlan, r.render().trim_end().to_string()))
        }
    })
}

/// Canonical JSON of a plan.
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_plan_to_json(plan: *const SrPlan, out: *mut *mut c_char) -> SrStatus {
    guard(|| give_string(out, plan_ref(plan)?.to_json()))
}

fn mask_set(mask: u64) -> CharacterSet {
    (0..64).filter(|i| mask & (1 << i) != 0).map(|i| format!("c{i}")).collect()
}

/// Movement type of a transition whose exiting and entering characters are
/// given as bit masks over character ids.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_classify_movement_mask(exiting: u64, entering: u64, out: *mut SrMovement) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let m = classify_movement_type(&mask_set(exiting), &mask_set(entering))
            .map_err(|e| Fail(SrStatus::InvalidArgument, e.to_string()))?;
        *out = match m {
            MovementType::Entry => SrMovement::Entry,
            MovementType::Exit => SrMovement::Exit,
            MovementType::NoChange => SrMovement::NoChange,
            MovementType::Combination => SrMovement::Combination,
        };
        Ok(())
    })
}

/// Transition metadata between narrative shots `prev_shot` and
/// `prev_shot + 2` of a scene, as JSON.
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_derive_transition(
    plan: *const SrPlan,
    scene: u32,
    prev_shot: u32,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let plan = plan_ref(plan)?;
        let find = |index: u32| {
            plan.shots
                .iter()
                .find(|s| s.scene_index == scene && s.index == index && s.kind == ShotKind::Narrative)
                .ok_or_else(|| Fail(SrStatus::InvalidArgument, format!("scene {scene} has no narrative shot {index}")))
        };
        let tau = derive_transition_metadata(find(prev_shot)?, find(prev_shot + 2)?)
            .map_err(|e| Fail(SrStatus::InvalidArgument, e.to_string()))?;
        give_string(out, serde_json::to_string(&tau).expect("metadata serializes"))
    })
}

/// Render a plan with the in-process mock seats into `out_dir`. `config_toml`
/// may be NULL for defaults; its `out` key is replaced by `out_dir`. The run
/// manifest JSON is stored in `*manifest`.
///
/// # Safety
/// `plan` must be a live handle; strings must be NUL-terminated; `manifest` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_render_mock(
    plan: *const SrPlan,
    config_toml: *const c_char,
    out_dir: *const c_char,
    manifest: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let plan = plan_ref(plan)?;
        let out_dir = PathBuf::from(text(out_dir, "out_dir")?);
        let mut cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(text(config_toml, "config_toml")?, std::path::Path::new("<ffi>"))
                .map_err(|e| Fail(SrStatus::InvalidArgument, e.to_string()))?
        };
        cfg.backend = storyreel::config::BackendKind::Mock;
        cfg.out = out_dir;
        let output = run_pipeline(plan, &cfg.backends(), &cfg).map_err(|e| match e {
            RenderError::Backend(_) => Fail(SrStatus::Backend, e.to_string()),
            RenderError::Plan(_) => Fail(SrStatus::InvalidPlan, e.to_string()),
            other => Fail(SrStatus::Render, other.to_string()),
        })?;
        give_string(manifest, serde_json::to_string(&output.manifest).expect("manifest serializes"))
    })
}

/// Summed squared embedding distance between `frame_count` RGB8 frames
/// (packed, `width * height * 3` bytes each) and an RGB8 background.
///
/// # Safety
/// `frames` must hold `frame_count * width * height * 3` bytes (may be NULL
/// when `frame_count` is 0); `background` must hold `width * height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn sr_background_drift(
    frames: *const u8,
    frame_count: u32,
    background: *const u8,
    width: u32,
    height: u32,
    encoder: SrEncoder,
    out: *mut f64,
) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        if background.is_null() || (frames.is_null() && frame_count > 0) {
            return Err(null("pixel buffer"));
        }
        let size = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(3))
            .filter(|&n| n > 0)
            .ok_or_else(|| Fail(SrStatus::InvalidArgument, format!("bad frame size {width}x{height}")))?;
        let image = |ptr: *const u8| {
            image::RgbImage::from_raw(width, height, std::slice::from_raw_parts(ptr, size).to_vec())
                .expect("buffer sized to the frame")
        };
        let bg = image(background);
        let clip: Vec<image::RgbImage> = (0..frame_count as usize).map(|i| image(frames.add(i * size))).collect();
        let kind = match encoder {
            SrEncoder::MeanColorGrid => EncoderKind::MeanColorGrid,
            SrEncoder::ChannelHistogram => EncoderKind::ChannelHistogram,
        };
        *out = background_drift(&clip, &bg, kind.build().as_ref())
            .map_err(|e| Fail(SrStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status_codes() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, SrStatus::Panic);
        let msg = unsafe { CStr::from_ptr(sr_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
        assert_eq!(guard(|| Ok(())), SrStatus::Ok);
        assert!(sr_last_error().is_null());
    }

    #[test]
    fn masks_name_characters_by_bit() {
        assert_eq!(mask_set(0b101).into_iter().collect::<Vec<_>>(), ["c0", "c2"]);
    }
}
