//! C ABI for loading a model artifact and generating profiles into
//! caller-owned buffers.
//!
//! Every function returns an [`LsStatus`]; on failure a message is kept per
//! thread and can be read with [`ls_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use loadsynth::artifact::Artifact;
use loadsynth::generator::{generate, GenerationRequest, GuardConfig};
use loadsynth::profile_store::{Condition, EnergyRating, LabelVector, PropertyType, PERIODS};
use loadsynth::Error;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingFile = 3,
    ChecksumMismatch = 4,
    BadArtifact = 5,
    GuardRefused = 6,
    BudgetExhausted = 7,
    BufferTooSmall = 8,
    Io = 9,
    Internal = 10,
}

/// Opaque model handle.
pub struct LsModel {
    artifact: Artifact,
    guard: GuardConfig,
    version: Vec<u8>,
}

/// Label constraint; `-1` in any field means "any value". Booleans use 0/1,
/// `property_type` indexes detached, semi_detached, terraced, flat,
/// bungalow and `energy_rating` indexes A..G.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LsCondition {
    pub has_ev: i8,
    pub has_heat_pump: i8,
    pub smart_tariff: i8,
    pub property_type: i8,
    pub energy_rating: i8,
}

/// Realized labels of one generated profile, same encoding as [`LsCondition`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LsLabels {
    pub has_ev: u8,
    pub has_heat_pump: u8,
    pub smart_tariff: u8,
    pub property_type: u8,
    pub energy_rating: u8,
}

/// Number of readings per generated profile.
pub const LS_PERIODS: u32 = 48;

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into().into_bytes());
}

fn fail(status: LsStatus, msg: impl Into<String>) -> LsStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::MissingFile(_) => LsStatus::MissingFile,
        Error::ChecksumMismatch => LsStatus::ChecksumMismatch,
        Error::Artifact(_) | Error::DimensionMismatch(_) => LsStatus::BadArtifact,
        Error::GuardRefused(_) => LsStatus::GuardRefused,
        Error::BudgetExhausted { .. } => LsStatus::BudgetExhausted,
        Error::InvalidArgument(_) => LsStatus::InvalidArgument,
        Error::Io(_) => LsStatus::Io,
        _ => LsStatus::Internal,
    }
}

fn guarded(f: impl FnOnce() -> LsStatus) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == LsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(LsStatus::Internal, "panic inside loadsynth"),
    }
}

fn flag(v: i8, name: &str) -> Result<Option<bool>, String> {
    match v {
        -1 => Ok(None),
        0 => Ok(Some(false)),
        1 => Ok(Some(true)),
        _ => Err(format!("{name} must be -1, 0 or 1, got {v}")),
    }
}

fn choice<T: Copy>(v: i8, all: &[T], name: &str) -> Result<Option<T>, String> {
    match v {
        -1 => Ok(None),
        i if i >= 0 && (i as usize) < all.len() => Ok(Some(all[i as usize])),
        _ => Err(format!("{name} index {v} out of range")),
    }
}

fn to_condition(c: &LsCondition) -> Result<Condition, String> {
    Ok(Condition {
        has_ev: flag(c.has_ev, "has_ev")?,
        has_heat_pump: flag(c.has_heat_pump, "has_heat_pump")?,
        smart_tariff: flag(c.smart_tariff, "smart_tariff")?,
        property_type: choice(c.property_type, &PropertyType::ALL, "property_type")?,
        energy_rating: choice(c.energy_rating, &EnergyRating::ALL, "energy_rating")?,
    })
}

fn to_labels(l: &LabelVector) -> LsLabels {
    LsLabels {
        has_ev: u8::from(l.has_ev),
        has_heat_pump: u8::from(l.has_heat_pump),
        smart_tariff: u8::from(l.smart_tariff),
        property_type: l.property_type.index() as u8,
        energy_rating: l.energy_rating.index() as u8,
    }
}

/// Loads an artifact file and stores a new handle in `*out`. Release it with
/// [`ls_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_model_open(path: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(LsStatus::NullPointer, "path and out must be non-null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(LsStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match Artifact::load(path) {
            Ok(artifact) => {
                let mut version = artifact.version_id().into_bytes();
                version.push(0);
                *out = Box::into_raw(Box::new(LsModel { artifact, guard: GuardConfig::default(), version }));
                LsStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`ls_model_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Replaces the population guard thresholds used by [`ls_generate`].
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_model_set_guards(model: *mut LsModel, min_fraction: f64, min_households: u32) -> LsStatus {
    guarded(|| {
        let Some(m) = model.as_mut() else {
            return fail(LsStatus::NullPointer, "model is null");
        };
        if !(min_fraction > 0.0 && min_fraction < 1.0) || min_households == 0 {
            return fail(LsStatus::InvalidArgument, "min_fraction must lie in (0, 1), min_households >= 1");
        }
        m.guard = GuardConfig { min_fraction, min_households: min_households as usize };
        LsStatus::Ok
    })
}

/// Pointer to the NUL-terminated model version string, valid while the
/// handle lives. Null if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ls_model_version(model: *const LsModel) -> *const c_char {
    match model.as_ref() {
        Some(m) => m.version.as_ptr().cast(),
        None => ptr::null(),
    }
}

/// Latent dimension of the loaded model, 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ls_model_latent_dim(model: *const LsModel) -> u32 {
    model.as_ref().map_or(0, |m| m.artifact.model.latent_dim as u32)
}

/// Generates `count` profiles into `profiles` (row-major, `count * 48`
/// doubles, `capacity` is its length in doubles). `labels` may be null;
/// otherwise it must hold `count` entries. `attempts` may be null.
///
/// # Safety
/// All non-null pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ls_generate(
    model: *const LsModel,
    condition: *const LsCondition,
    count: u32,
    seed: u64,
    profiles: *mut f64,
    capacity: usize,
    labels: *mut LsLabels,
    attempts: *mut u64,
) -> LsStatus {
    guarded(|| {
        let (Some(m), Some(c)) = (model.as_ref(), condition.as_ref()) else {
            return fail(LsStatus::NullPointer, "model and condition must be non-null");
        };
        if profiles.is_null() {
            return fail(LsStatus::NullPointer, "profiles must be non-null");
        }
        let needed = count as usize * PERIODS;
        if capacity < needed {
            return fail(LsStatus::BufferTooSmall, format!("profiles buffer holds {capacity} doubles, need {needed}"));
        }
        let condition = match to_condition(c) {
            Ok(c) => c,
            Err(msg) => return fail(LsStatus::InvalidArgument, msg),
        };
        let req = GenerationRequest { condition, count: count as usize, seed };
        let result = match generate(&m.artifact.model, &m.artifact.mixture, &req, &m.guard) {
            Ok(r) => r,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        let out = std::slice::from_raw_parts_mut(profiles, needed);
        for (dst, src) in out.chunks_exact_mut(PERIODS).zip(&result.profiles) {
            dst.copy_from_slice(src);
        }
        if !labels.is_null() {
            let out = std::slice::from_raw_parts_mut(labels, count as usize);
            for (dst, src) in out.iter_mut().zip(&result.realized_labels) {
                *dst = to_labels(src);
            }
        }
        if !attempts.is_null() {
            *attempts = result.diagnostics.attempts as u64;
        }
        LsStatus::Ok
    })
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes, or null with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn ls_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn ls_status_str(status: LsStatus) -> *const c_char {
    let s: &'static CStr = match status {
        LsStatus::Ok => c"ok",
        LsStatus::NullPointer => c"null pointer",
        LsStatus::InvalidArgument => c"invalid argument",
        LsStatus::MissingFile => c"file not found",
        LsStatus::ChecksumMismatch => c"checksum mismatch",
        LsStatus::BadArtifact => c"malformed artifact",
        LsStatus::GuardRefused => c"refused by population guard",
        LsStatus::BudgetExhausted => c"acceptance rate too low",
        LsStatus::BufferTooSmall => c"buffer too small",
        LsStatus::Io => c"io error",
        LsStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_translation() {
        let c = LsCondition { has_ev: 1, has_heat_pump: -1, smart_tariff: 0, property_type: 3, energy_rating: -1 };
        let cond = to_condition(&c).unwrap();
        assert_eq!(cond.has_ev, Some(true));
        assert_eq!(cond.has_heat_pump, None);
        assert_eq!(cond.smart_tariff, Some(false));
        assert_eq!(cond.property_type, Some(PropertyType::Flat));
        assert!(to_condition(&LsCondition { has_ev: 2, ..c }).is_err());
        assert!(to_condition(&LsCondition { energy_rating: 7, ..c }).is_err());
    }

    #[test]
    fn periods_constant_matches() {
        assert_eq!(LS_PERIODS as usize, PERIODS);
    }

    #[test]
    fn error_message_truncates() {
        set_error("abcdef");
        let mut buf = [0 as c_char; 4];
        let n = unsafe { ls_last_error_message(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 6);
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) };
        assert_eq!(s.to_str().unwrap(), "abc");
    }
}
