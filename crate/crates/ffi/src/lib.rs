//! C ABI over `flexssl`.
//!
//! Objects are opaque handles created by `*_new`/`flexssl_train` and released
//! with the matching `*_free`. Every fallible call returns a [`FlexsslStatus`];
//! on failure a description is available from [`flexssl_last_error`] on the
//! same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use flexssl::cpl::{Confidence, CurriculumConfig, CurriculumState, Mapping};
use flexssl::harness::ExperimentConfig;
use flexssl::trainer::{train, RunArtifact};
use flexssl::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlexsslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlexsslMapping {
    Concave = 0,
    Linear = 1,
    Convex = 2,
}

impl From<FlexsslMapping> for Mapping {
    fn from(m: FlexsslMapping) -> Self {
        match m {
            FlexsslMapping::Concave => Mapping::Concave,
            FlexsslMapping::Linear => Mapping::Linear,
            FlexsslMapping::Convex => Mapping::Convex,
        }
    }
}

/// Curriculum threshold state over a fixed unlabeled set.
pub struct FlexsslCurriculum {
    state: CurriculumState,
}

/// A finished training run with its checkpoint metrics.
pub struct FlexsslRun {
    run: RunArtifact,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FlexsslStatus {
    match e {
        Error::Shape(_) | Error::State(_) | Error::Argument(_) => FlexsslStatus::InvalidArgument,
        Error::Config(_) | Error::Parse { .. } => FlexsslStatus::Config,
        Error::Io { .. } => FlexsslStatus::Io,
        Error::Divergence { .. } => FlexsslStatus::Numeric,
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

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> FlexsslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FlexsslStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            FlexsslStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FlexsslStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn path_arg(ptr: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Error::Argument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Copies the calling thread's last error message (NUL-terminated, truncated
/// to `len - 1` bytes) into `buf` and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn flexssl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a curriculum over `unlabeled_count` samples and `class_count` classes.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn flexssl_curriculum_new(
    unlabeled_count: usize,
    class_count: usize,
    tau: f64,
    mapping: FlexsslMapping,
    warmup: bool,
    out: *mut *mut FlexsslCurriculum,
) -> FlexsslStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cfg = CurriculumConfig {
            mapping: mapping.into(),
            warmup,
            ..CurriculumConfig::new(tau)
        };
        let state = CurriculumState::new(unlabeled_count, class_count, cfg)?;
        *out = Box::into_raw(Box::new(FlexsslCurriculum { state }));
        Ok(())
    })
}

/// Records one batch of predictions: sample index, max confidence and
/// predicted class for each of `len` samples.
///
/// # Safety
/// `handle` must come from [`flexssl_curriculum_new`]; the three arrays must
/// hold `len` elements each.
#[no_mangle]
pub unsafe extern "C" fn flexssl_curriculum_record(
    handle: *mut FlexsslCurriculum,
    indices: *const usize,
    confidences: *const f64,
    classes: *const usize,
    len: usize,
) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_mut().ok_or(Failure::Null("handle"))?;
        let idx = slice(indices, len, "indices")?;
        let conf = slice(confidences, len, "confidences")?;
        let cls = slice(classes, len, "classes")?;
        let batch: Vec<Confidence> = (0..len)
            .map(|i| Confidence {
                index: idx[i],
                confidence: conf[i],
                class: cls[i],
            })
            .collect();
        h.state.record_predictions(&batch)?;
        Ok(())
    })
}

fn copy_out(values: &[f64], out: &mut [f64]) -> Result<(), Failure> {
    if out.len() != values.len() {
        return Err(Error::Shape(format!("buffer holds {}, need {}", out.len(), values.len())).into());
    }
    out.copy_from_slice(values);
    Ok(())
}

/// Writes the current per-class thresholds into `out` (`len` = class count).
///
/// # Safety
/// `handle` must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn flexssl_curriculum_thresholds(
    handle: *const FlexsslCurriculum,
    out: *mut f64,
    len: usize,
) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        copy_out(&h.state.thresholds().thresholds, slice_mut(out, len, "out")?)
    })
}

/// Writes the normalized learning effects into `out` (`len` = class count).
///
/// # Safety
/// `handle` must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn flexssl_curriculum_effects(
    handle: *const FlexsslCurriculum,
    out: *mut f64,
    len: usize,
) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        copy_out(&h.state.normalized_effects().0, slice_mut(out, len, "out")?)
    })
}

/// # Safety
/// `handle` must be null or come from [`flexssl_curriculum_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flexssl_curriculum_free(handle: *mut FlexsslCurriculum) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Trains one run described by a config file. `algorithm` may be null (first
/// plan algorithm); `labels_per_class` and `iterations` of 0 and a null
/// `seed` keep the config values.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `algorithm` null or
/// NUL-terminated; `seed` null or valid; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn flexssl_train(
    config_path: *const c_char,
    algorithm: *const c_char,
    labels_per_class: usize,
    seed: *const u64,
    iterations: usize,
    out: *mut *mut FlexsslRun,
) -> FlexsslStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = path_arg(config_path, "config_path")?;
        let cfg = ExperimentConfig::load(&path)?;
        let name = if algorithm.is_null() {
            cfg.plan.algorithms.first().cloned().unwrap_or_else(|| "flexmatch".into())
        } else {
            path_arg(algorithm, "algorithm")?.display().to_string()
        };
        let budget = match labels_per_class {
            0 => *cfg.plan.labels_per_class.first().unwrap_or(&4),
            n => n,
        };
        let mut train_cfg = cfg.train.clone();
        train_cfg.spec = cfg.algorithm(&name)?;
        train_cfg.seed = seed.as_ref().copied().unwrap_or(*cfg.plan.seeds.first().unwrap_or(&1));
        if iterations > 0 {
            train_cfg.iterations = iterations;
            train_cfg.checkpoint_every = train_cfg.checkpoint_every.min(iterations);
        }
        let pool = cfg.dataset.pool()?;
        let data = cfg.dataset.split(&pool, budget, train_cfg.seed)?;
        let run = train(&train_cfg, &data)?;
        *out = Box::into_raw(Box::new(FlexsslRun { run }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be live; `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn flexssl_run_checkpoint_count(handle: *const FlexsslRun, count: *mut usize) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let c = count.as_mut().ok_or(Failure::Null("count"))?;
        *c = h.run.records.len();
        Ok(())
    })
}

/// Eval error rate and iteration number of checkpoint `index`.
///
/// # Safety
/// `handle` must be live; `error` and `iteration` must be valid.
#[no_mangle]
pub unsafe extern "C" fn flexssl_run_checkpoint(
    handle: *const FlexsslRun,
    index: usize,
    iteration: *mut usize,
    error: *mut f64,
) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let it = iteration.as_mut().ok_or(Failure::Null("iteration"))?;
        let err = error.as_mut().ok_or(Failure::Null("error"))?;
        let r = h.run.records.get(index).ok_or_else(|| {
            Error::Argument(format!("checkpoint {index} out of range ({})", h.run.records.len()))
        })?;
        *it = r.iteration;
        *err = r.eval.error;
        Ok(())
    })
}

/// Best and median-of-last-20 eval error over all checkpoints.
///
/// # Safety
/// `handle` must be live; both outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn flexssl_run_summary(
    handle: *const FlexsslRun,
    best_error: *mut f64,
    median_last_20_error: *mut f64,
) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let best = best_error.as_mut().ok_or(Failure::Null("best_error"))?;
        let med = median_last_20_error.as_mut().ok_or(Failure::Null("median_last_20_error"))?;
        let s = h.run.summary()?;
        *best = s.best_error;
        *med = s.median_last_20_error;
        Ok(())
    })
}

/// Writes the run's metrics CSV to `path`.
///
/// # Safety
/// `handle` must be live; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn flexssl_run_write_csv(handle: *const FlexsslRun, path: *const c_char) -> FlexsslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let p = path_arg(path, "path")?;
        h.run.save_csv(&p)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`flexssl_train`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flexssl_run_free(handle: *mut FlexsslRun) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
