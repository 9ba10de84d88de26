//! C ABI over the training engine.
//!
//! Callers build a configuration through an opaque handle, then launch the
//! pipeline commands. Every function returns a [`SaceoStatus`]; on failure
//! the message is retrievable with [`saceo_last_error_message`] until the
//! next call on the same thread. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use saceo::harness::{
    cmd_record_expert, cmd_run, cmd_train_expert, compare_runs, parse_expert_record, write_report,
    RunConfig,
};
use saceo::Error;

/// Result code of every FFI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaceoStatus {
    Ok = 0,
    /// Invalid configuration or contradictory settings.
    ConfigError = 1,
    /// API misuse (bad handle state, empty dataset, horizon overrun).
    UsageError = 2,
    /// A NaN or infinity surfaced during training.
    NumericalError = 3,
    /// A data file failed to parse.
    ParseError = 4,
    /// Filesystem failure.
    IoError = 5,
    /// Null pointer or malformed UTF-8 argument.
    InvalidArgument = 6,
    /// Internal panic; the message carries what is known.
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> SaceoStatus {
    match err {
        Error::Config(_) => SaceoStatus::ConfigError,
        Error::Usage(_) => SaceoStatus::UsageError,
        Error::Numerical { .. } => SaceoStatus::NumericalError,
        Error::Parse { .. } => SaceoStatus::ParseError,
        Error::Io { .. } => SaceoStatus::IoError,
    }
}

fn run_guarded<F: FnOnce() -> Result<(), (SaceoStatus, String)>>(f: F) -> SaceoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaceoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&msg);
            SaceoStatus::Panic
        }
    }
}

fn lift(err: Error) -> (SaceoStatus, String) {
    (status_of(&err), err.to_string())
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, (SaceoStatus, String)> {
    if ptr.is_null() {
        return Err((SaceoStatus::InvalidArgument, "null string argument".into()));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| (SaceoStatus::InvalidArgument, "argument is not UTF-8".into()))
}

/// Opaque run configuration handle.
pub struct SaceoConfig {
    inner: RunConfig,
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn saceo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a configuration with built-in defaults. Free with
/// `saceo_config_free`.
#[no_mangle]
pub extern "C" fn saceo_config_new() -> *mut SaceoConfig {
    Box::into_raw(Box::new(SaceoConfig {
        inner: RunConfig::default(),
    }))
}

/// Releases a configuration handle. A null handle is a no-op.
///
/// # Safety
/// `cfg` must be null or a pointer returned by `saceo_config_new` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn saceo_config_free(cfg: *mut SaceoConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

unsafe fn config_mut<'a>(
    cfg: *mut SaceoConfig,
) -> Result<&'a mut SaceoConfig, (SaceoStatus, String)> {
    if cfg.is_null() {
        return Err((SaceoStatus::InvalidArgument, "null config handle".into()));
    }
    Ok(unsafe { &mut *cfg })
}

/// Applies one `key = value` assignment, exactly like a config-file line.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saceo_config_set(
    cfg: *mut SaceoConfig,
    key: *const c_char,
    value: *const c_char,
) -> SaceoStatus {
    run_guarded(|| {
        let cfg = unsafe { config_mut(cfg) }?;
        let key = unsafe { cstr(key) }?;
        let value = unsafe { cstr(value) }?;
        cfg.inner.set(key, value).map_err(lift)
    })
}

/// Loads a flat `key = value` config file over the current values.
///
/// # Safety
/// `cfg` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saceo_config_load_file(
    cfg: *mut SaceoConfig,
    path: *const c_char,
) -> SaceoStatus {
    run_guarded(|| {
        let cfg = unsafe { config_mut(cfg) }?;
        let path = unsafe { cstr(path) }?;
        cfg.inner.apply_file(Path::new(path)).map_err(lift)
    })
}

/// Validates the configuration without running anything.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn saceo_config_validate(cfg: *mut SaceoConfig) -> SaceoStatus {
    run_guarded(|| {
        let cfg = unsafe { config_mut(cfg) }?;
        cfg.inner.validate().map_err(lift)
    })
}

/// Runs the configured training job; outputs land in the configured (or
/// derived) run directory.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn saceo_run(cfg: *mut SaceoConfig) -> SaceoStatus {
    run_guarded(|| {
        let cfg = unsafe { config_mut(cfg) }?;
        cmd_run(&cfg.inner).map(|_| ()).map_err(lift)
    })
}

/// Trains the expert agent. When `mean_return_out` is non-null it receives
/// the evaluated mean return of the trained expert.
///
/// # Safety
/// `cfg` must be a live handle; `mean_return_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn saceo_train_expert(
    cfg: *mut SaceoConfig,
    mean_return_out: *mut f64,
) -> SaceoStatus {
    run_guarded(|| {
        let cfg = unsafe { config_mut(cfg) }?;
        let outcome = cmd_train_expert(&cfg.inner).map_err(lift)?;
        if !mean_return_out.is_null() {
            unsafe { *mean_return_out = outcome.evaluation.mean_return };
        }
        Ok(())
    })
}

/// Rolls out a checkpoint deterministically and writes the expert file.
/// `max_states = 0` means no cap.
///
/// # Safety
/// String arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saceo_record_expert(
    checkpoint: *const c_char,
    env: *const c_char,
    horizon: usize,
    trajectories: usize,
    max_states: usize,
    out_path: *const c_char,
    seed: u64,
) -> SaceoStatus {
    run_guarded(|| {
        let checkpoint = unsafe { cstr(checkpoint) }?;
        let env = unsafe { cstr(env) }?;
        let out_path = unsafe { cstr(out_path) }?;
        cmd_record_expert(
            Path::new(checkpoint),
            env,
            horizon,
            trajectories,
            (max_states > 0).then_some(max_states),
            Path::new(out_path),
            seed,
        )
        .map(|_| ())
        .map_err(lift)
    })
}

/// Aggregates finished run directories against an expert record, writing
/// `report.txt`, `curves.csv`, and `learning_curves.svg` into `out_dir`.
///
/// # Safety
/// `run_dirs` must point to `n_runs` valid NUL-terminated strings;
/// `thresholds` must point to `n_thresholds` doubles; other strings must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saceo_compare(
    run_dirs: *const *const c_char,
    n_runs: usize,
    expert_record: *const c_char,
    out_dir: *const c_char,
    thresholds: *const f64,
    n_thresholds: usize,
) -> SaceoStatus {
    run_guarded(|| {
        if run_dirs.is_null() || n_runs == 0 {
            return Err((SaceoStatus::InvalidArgument, "no run directories".into()));
        }
        let mut dirs = Vec::with_capacity(n_runs);
        for i in 0..n_runs {
            let ptr = unsafe { *run_dirs.add(i) };
            dirs.push(PathBuf::from(unsafe { cstr(ptr) }?));
        }
        let expert_record = unsafe { cstr(expert_record) }?;
        let out_dir = unsafe { cstr(out_dir) }?;
        let thresholds = if thresholds.is_null() || n_thresholds == 0 {
            vec![0.75, 0.95]
        } else {
            unsafe { std::slice::from_raw_parts(thresholds, n_thresholds) }.to_vec()
        };
        let expert_return = parse_expert_record(Path::new(expert_record)).map_err(lift)?;
        let report = compare_runs(&dirs, expert_return, &thresholds).map_err(lift)?;
        write_report(&report, Path::new(out_dir)).map_err(lift)
    })
}

/// Evaluates a checkpointed policy: `episodes` deterministic rollouts on a
/// fresh environment, writing the mean and standard deviation of returns.
///
/// # Safety
/// String arguments must be NUL-terminated; out pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn saceo_evaluate_checkpoint(
    checkpoint: *const c_char,
    env: *const c_char,
    horizon: usize,
    episodes: usize,
    seed: u64,
    mean_out: *mut f64,
    std_out: *mut f64,
) -> SaceoStatus {
    run_guarded(|| {
        let checkpoint = unsafe { cstr(checkpoint) }?;
        let env_name = unsafe { cstr(env) }?;
        let session =
            saceo::agent::load_checkpoint(Path::new(checkpoint), None).map_err(lift)?;
        let mut env = saceo::envs::make_env(env_name, horizon).map_err(lift)?;
        let mut rng = saceo::rng::SeededRng::new(seed, saceo::rng::Stream::Eval);
        let result = saceo::agent::evaluate(&session.agent, env.as_mut(), episodes, &mut rng)
            .map_err(lift)?;
        if !mean_out.is_null() {
            unsafe { *mean_out = result.mean_return };
        }
        if !std_out.is_null() {
            unsafe { *std_out = result.std_return };
        }
        Ok(())
    })
}
