//! C ABI over the simulator.
//!
//! Every entry point returns an `int32_t` status (`ACCRETE_OK` on success)
//! and never unwinds across the boundary. On failure the message is kept
//! per thread and can be fetched with [`accrete_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.
//! Strings are copied into caller buffers; when a buffer is too small the
//! call returns `ACCRETE_BUFFER_TOO_SMALL` and reports the size needed,
//! terminating NUL included.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use accrete::cli;
use accrete::config::RunConfig;
use accrete::coupling::{self, CoupledSolution};
use accrete::error::Error;
use accrete::fields::{Edge, Grid2, ScalarField};

pub const ACCRETE_OK: i32 = 0;
pub const ACCRETE_NULL_POINTER: i32 = 1;
pub const ACCRETE_INVALID_ARGUMENT: i32 = 2;
pub const ACCRETE_CONFIG_ERROR: i32 = 3;
pub const ACCRETE_NUMERICAL_ERROR: i32 = 4;
pub const ACCRETE_IO_ERROR: i32 = 5;
pub const ACCRETE_BUFFER_TOO_SMALL: i32 = 6;
pub const ACCRETE_PANIC: i32 = 7;

/// Run configuration.
pub struct AccreteConfig {
    inner: RunConfig,
}

/// Outcome of a full run with artifacts on disk.
pub struct AccreteRun {
    exit_code: i32,
    passed: bool,
    manifest_path: CString,
    summary: CString,
}

/// In-memory coupled solution.
pub struct AccreteSolution {
    inner: CoupledSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } => ACCRETE_CONFIG_ERROR,
            Error::Io(_) => ACCRETE_IO_ERROR,
            Error::Shape { .. } => ACCRETE_INVALID_ARGUMENT,
            _ => ACCRETE_NUMERICAL_ERROR,
        };
        Self::new(code, e.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and maps it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ACCRETE_OK,
        Ok(Err(fail)) => {
            set_error(&fail.message);
            fail.code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            ACCRETE_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(ACCRETE_NULL_POINTER, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(ACCRETE_NULL_POINTER, format!("{what} is null")))
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::new(ACCRETE_NULL_POINTER, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::new(ACCRETE_INVALID_ARGUMENT, format!("{what} is not UTF-8")))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::new(ACCRETE_NULL_POINTER, format!("{what} is null")));
    }
    if len < needed {
        return Err(Failure::new(
            ACCRETE_BUFFER_TOO_SMALL,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

/// Copies `s` with its NUL into `buf`; `needed` (if non-null) receives the
/// full size.
unsafe fn copy_string(s: &CStr, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let bytes = s.to_bytes_with_nul();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len();
    }
    if buf.is_null() || len < bytes.len() {
        return Err(Failure::new(
            ACCRETE_BUFFER_TOO_SMALL,
            format!("buffer of {len} bytes, {} needed", bytes.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    Ok(())
}

fn to_cstring(s: String) -> CString {
    CString::new(s.replace('\0', " ")).expect("NUL removed")
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn accrete_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`. Returns the
/// size needed including the NUL, or 0 when there is no error recorded.
/// Truncates to `len - 1` bytes when `buf` is too small.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn accrete_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len() + 1
        }
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_default(out: *mut *mut AccreteConfig) -> i32 {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = Box::into_raw(Box::new(AccreteConfig {
            inner: RunConfig::default(),
        }));
        Ok(())
    })
}

/// Configuration parsed from TOML text; omitted keys take their defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_from_toml(text: *const c_char, out: *mut *mut AccreteConfig) -> i32 {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let inner = RunConfig::from_toml_str(&string_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(AccreteConfig { inner }));
        Ok(())
    })
}

/// Configuration read from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_from_file(path: *const c_char, out: *mut *mut AccreteConfig) -> i32 {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let inner = RunConfig::from_path(&PathBuf::from(string_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AccreteConfig { inner }));
        Ok(())
    })
}

/// Selects the mode by its command name (`simulate`, `eikonal`,
/// `energy-audit`, `sharp-limit`, `gradcheck`).
///
/// # Safety
/// `config` must come from this library; `mode` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_set_mode(config: *mut AccreteConfig, mode: *const c_char) -> i32 {
    guard(|| {
        let config = deref_mut(config, "config")?;
        let name = string_arg(mode, "mode")?;
        config.inner.mode = serde_json::from_value(serde_json::Value::String(name.clone()))
            .map_err(|_| Failure::new(ACCRETE_INVALID_ARGUMENT, format!("unknown mode '{name}'")))?;
        Ok(())
    })
}

/// Overrides the output directory.
///
/// # Safety
/// `config` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_set_output_dir(config: *mut AccreteConfig, dir: *const c_char) -> i32 {
    guard(|| {
        let config = deref_mut(config, "config")?;
        config.inner.output.dir = PathBuf::from(string_arg(dir, "dir")?);
        Ok(())
    })
}

/// Runs the pre-flight checks without executing anything.
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_validate(config: *const AccreteConfig) -> i32 {
    guard(|| Ok(deref(config, "config")?.inner.validate()?))
}

/// Hex SHA-256 of the configuration, as recorded in the manifest.
///
/// # Safety
/// `config` must come from this library; `buf` valid for `len` bytes or
/// null; `needed` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_hash(
    config: *const AccreteConfig,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let hash = to_cstring(deref(config, "config")?.inner.hash());
        copy_string(&hash, buf, len, needed)
    })
}

/// # Safety
/// `config` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn accrete_config_free(config: *mut AccreteConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Executes the configured mode and writes its artifacts and manifest.
/// A run whose checks fail still returns `ACCRETE_OK`; inspect
/// [`accrete_run_exit_code`].
///
/// # Safety
/// `config` must come from this library, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_run(config: *const AccreteConfig, out: *mut *mut AccreteRun) -> i32 {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let outcome = cli::run(&deref(config, "config")?.inner)?;
        *out = Box::into_raw(Box::new(AccreteRun {
            exit_code: outcome.status.code(),
            passed: outcome.manifest.passed,
            manifest_path: to_cstring(outcome.manifest_path.display().to_string()),
            summary: to_cstring(outcome.summary.join("\n")),
        }));
        Ok(())
    })
}

/// Exit code the command-line tool would return for this run.
///
/// # Safety
/// `run` must come from this library, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_run_exit_code(run: *const AccreteRun, out: *mut i32) -> i32 {
    guard(|| {
        *deref_mut(out, "out")? = deref(run, "run")?.exit_code;
        Ok(())
    })
}

/// 1 when every check of the run passed, else 0.
///
/// # Safety
/// `run` must come from this library, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_run_passed(run: *const AccreteRun, out: *mut i32) -> i32 {
    guard(|| {
        *deref_mut(out, "out")? = deref(run, "run")?.passed as i32;
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library; `buf` valid for `len` bytes or null;
/// `needed` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_run_manifest_path(
    run: *const AccreteRun,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| copy_string(&deref(run, "run")?.manifest_path, buf, len, needed))
}

/// Human-readable summary, one item per line.
///
/// # Safety
/// As for [`accrete_run_manifest_path`].
#[no_mangle]
pub unsafe extern "C" fn accrete_run_summary(
    run: *const AccreteRun,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| copy_string(&deref(run, "run")?.summary, buf, len, needed))
}

/// # Safety
/// `run` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn accrete_run_free(run: *mut AccreteRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Coupled run kept in memory; nothing is written.
///
/// # Safety
/// `config` must come from this library, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_simulate(config: *const AccreteConfig, out: *mut *mut AccreteSolution) -> i32 {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let config = &deref(config, "config")?.inner;
        config.validate()?;
        let inner = coupling::iterate(&config.problem()?, &config.coupling)?;
        *out = Box::into_raw(Box::new(AccreteSolution { inner }));
        Ok(())
    })
}

/// Grid size and number of time steps of a solution.
///
/// # Safety
/// `sol` must come from this library; each output pointer must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_solution_dims(
    sol: *const AccreteSolution,
    nx: *mut usize,
    ny: *mut usize,
    steps: *mut usize,
) -> i32 {
    guard(|| {
        let sol = &deref(sol, "solution")?.inner;
        let grid = sol.theta.grid();
        *deref_mut(nx, "nx")? = grid.nx;
        *deref_mut(ny, "ny")? = grid.ny;
        *deref_mut(steps, "steps")? = sol.y.steps();
        Ok(())
    })
}

/// 1 when the coupled iteration met its tolerance, else 0.
///
/// # Safety
/// `sol` must come from this library, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn accrete_solution_converged(sol: *const AccreteSolution, out: *mut i32) -> i32 {
    guard(|| {
        *deref_mut(out, "out")? = deref(sol, "solution")?.inner.converged as i32;
        Ok(())
    })
}

/// Attachment times `θ`, row-major with `x` fastest, `nx * ny` values.
///
/// # Safety
/// `sol` must come from this library; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn accrete_solution_theta(sol: *const AccreteSolution, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let theta = &deref(sol, "solution")?.inner.theta.values;
        slice_out(out, len, theta.len(), "out")?.copy_from_slice(theta);
        Ok(())
    })
}

/// Deformation at step `step` as interleaved `(x, y)` pairs in node order,
/// `2 * nx * ny` values.
///
/// # Safety
/// `sol` must come from this library; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn accrete_solution_deformation(
    sol: *const AccreteSolution,
    step: usize,
    out: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let sol = &deref(sol, "solution")?.inner;
        if step > sol.y.steps() {
            return Err(Failure::new(
                ACCRETE_INVALID_ARGUMENT,
                format!("step {step} beyond the last step {}", sol.y.steps()),
            ));
        }
        let y = &sol.y.snapshot(step).values;
        let dst = slice_out(out, len, 2 * y.len(), "out")?;
        for (pair, v) in dst.chunks_exact_mut(2).zip(y) {
            pair[0] = v.x;
            pair[1] = v.y;
        }
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn accrete_solution_free(sol: *mut AccreteSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Fast-marching solve on an `nx × ny` grid over `[x0, x1] × [y0, y1]`
/// (`extent = {x0, x1, y0, y1}`). `speed` and `theta` hold one value per
/// node in row-major order; nodes with a nonzero `seed` start at `θ = 0`.
///
/// # Safety
/// `extent` must point to 4 doubles; `speed`, `seed` and `theta` to
/// `nx * ny` elements each.
#[no_mangle]
pub unsafe extern "C" fn accrete_eikonal(
    nx: usize,
    ny: usize,
    extent: *const f64,
    speed: *const f64,
    seed: *const u8,
    theta: *mut f64,
) -> i32 {
    guard(|| {
        if extent.is_null() || speed.is_null() || seed.is_null() || theta.is_null() {
            return Err(Failure::new(ACCRETE_NULL_POINTER, "null array argument"));
        }
        let e = std::slice::from_raw_parts(extent, 4);
        // The boundary condition is irrelevant to the front solve.
        let grid = Arc::new(Grid2::new(nx, ny, [e[0], e[1]], [e[2], e[3]], &[Edge::Left])?);
        let n = grid.len();
        let speed = ScalarField::new(grid.clone(), std::slice::from_raw_parts(speed, n).to_vec())?;
        let mask: Vec<bool> = std::slice::from_raw_parts(seed, n).iter().map(|&s| s != 0).collect();
        let bounds = (speed.min(), speed.max());
        if !(bounds.0 > 0.0 && bounds.1.is_finite()) {
            return Err(Failure::new(
                ACCRETE_INVALID_ARGUMENT,
                "speed must be positive and finite",
            ));
        }
        let front = accrete::eikonal::solve_eikonal(&speed, &mask, bounds)?;
        std::slice::from_raw_parts_mut(theta, n).copy_from_slice(&front.theta.values);
        Ok(())
    })
}
