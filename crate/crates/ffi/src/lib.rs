//! C ABI over `rhflow`.
//!
//! Objects cross the boundary as opaque pointers created by `*_new` / `*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`RhStatus`]; on failure the message is kept per thread and can
//! be read with [`rh_last_error_message`]. Panics are caught and reported as
//! [`RhStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rhflow::flow::{diagnostics, resume_with, FlowState, RunPolicy, SampleClock};
use rhflow::homogeneous::{closed_form, Model, ModelKind};
use rhflow::io::commands::{execute, Command};
use rhflow::io::{Checkpoint, CheckpointState, RngState, RunConfig};
use rhflow::schedule::CouplingSchedule;
use rhflow::RhError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Checkpoint = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhModelKind {
    Sphere2 = 0,
    ProductS2L = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhCommand {
    Run = 0,
    Verify = 1,
    Functionals = 2,
    ReducedVolume = 3,
}

/// Scalar diagnostics of the current flow state.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RhDiagnostics {
    pub t: f64,
    pub vol: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub sup_grad_phi_sq: f64,
    pub sup_rm: f64,
}

/// A validated run configuration.
pub struct RhConfig {
    inner: RunConfig,
}

/// A grid flow that can be advanced in stages.
pub struct RhFlow {
    state: FlowState,
    schedule: CouplingSchedule,
    policy: RunPolicy,
    clock: SampleClock,
    seed: u64,
    singular: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &RhError) -> RhStatus {
    match e {
        RhError::Config { .. } => RhStatus::Config,
        RhError::Checkpoint { .. } => RhStatus::Checkpoint,
        RhError::Io(_) | RhError::Json(_) | RhError::Csv(_) => RhStatus::Io,
        RhError::InvalidArgument(_) | RhError::InvalidGrid(_) | RhError::Shape(_) | RhError::NoClosedForm(_) => {
            RhStatus::InvalidArgument
        }
        RhError::NotPositiveDefinite { .. }
        | RhError::OffTarget { .. }
        | RhError::NonConvergence { .. }
        | RhError::StepRejected { .. } => RhStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Rh(RhError),
}

impl From<RhError> for Failure {
    fn from(e: RhError) -> Self {
        Failure::Rh(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RhStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            RhStatus::NullPointer
        }
        Ok(Err(Failure::Rh(e))) => {
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
            RhStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Rh(RhError::InvalidArgument(format!("`{what}` is not valid UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the NUL; 0 if none.
#[no_mangle]
pub extern "C" fn rh_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copy the last error message into `buf` (truncated, always NUL-terminated when `len > 0`).
///
/// Returns the number of bytes written, excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn rh_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Parse and validate a JSON configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rh_config_from_json(json: *const c_char, out: *mut *mut RhConfig) -> RhStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = mut_arg(out, "out")?;
        let inner = RunConfig::from_json(text)?;
        *out = Box::into_raw(Box::new(RhConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`rh_config_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rh_config_free(config: *mut RhConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run a command with artifacts written to `out_dir`; `exit_code` receives the CLI exit code.
///
/// # Safety
/// Pointers must be valid; `out_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rh_execute(
    command: RhCommand,
    config: *const RhConfig,
    out_dir: *const c_char,
    exit_code: *mut i32,
) -> RhStatus {
    guard(|| {
        let config = ref_arg(config, "config")?;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let exit_code = mut_arg(exit_code, "exit_code")?;
        let cmd = match command {
            RhCommand::Run => Command::Run,
            RhCommand::Verify => Command::Verify,
            RhCommand::Functionals => Command::Functionals,
            RhCommand::ReducedVolume => Command::ReducedVolume,
        };
        *exit_code = execute(cmd, &config.inner, &dir)?.exit_code();
        Ok(())
    })
}

/// Exact homogeneous state `(c, d)` at time `t`.
///
/// # Safety
/// `c` and `d` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rh_homogeneous_closed_form(
    kind: RhModelKind,
    normalized: bool,
    alpha: f64,
    t: f64,
    c: *mut f64,
    d: *mut f64,
) -> RhStatus {
    guard(|| {
        let c = mut_arg(c, "c")?;
        let d = mut_arg(d, "d")?;
        let kind = match kind {
            RhModelKind::Sphere2 => ModelKind::Sphere2,
            RhModelKind::ProductS2L => ModelKind::ProductS2L,
        };
        let s = closed_form(Model::new(kind, normalized), alpha, t)?;
        *c = s.c;
        *d = s.d;
        Ok(())
    })
}

fn grid_flow(config: &RunConfig, state: FlowState, clock: SampleClock) -> Result<RhFlow, Failure> {
    let gc = config.grid.as_ref().ok_or_else(|| RhError::Config {
        key: "grid".into(),
        message: "a grid section is required for a flow handle".into(),
    })?;
    Ok(RhFlow {
        state,
        schedule: config.schedule().clone(),
        policy: gc.policy(config.sample_interval()),
        clock,
        seed: config.seed,
        singular: false,
    })
}

/// Initial grid state described by `config`.
///
/// # Safety
/// `config` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_new(config: *const RhConfig, out: *mut *mut RhFlow) -> RhStatus {
    guard(|| {
        let config = &ref_arg(config, "config")?.inner;
        let out = mut_arg(out, "out")?;
        let gc = config.grid.as_ref().ok_or_else(|| RhError::Config {
            key: "grid".into(),
            message: "a grid section is required for a flow handle".into(),
        })?;
        let state = gc.initial_state(config.seed)?;
        let clock = SampleClock { origin: state.t, index: 0 };
        *out = Box::into_raw(Box::new(grid_flow(config, state, clock)?));
        Ok(())
    })
}

/// Restore a flow from a checkpoint file; run settings come from `config`.
///
/// # Safety
/// `config` must be a live handle; `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_load(config: *const RhConfig, path: *const c_char, out: *mut *mut RhFlow) -> RhStatus {
    guard(|| {
        let config = &ref_arg(config, "config")?.inner;
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = mut_arg(out, "out")?;
        let ck = Checkpoint::load(&path)?;
        let CheckpointState::Grid(state) = ck.state else {
            return Err(RhError::Checkpoint { offset: 0, message: "checkpoint does not hold a grid state".into() }.into());
        };
        let mut flow = grid_flow(config, state, ck.clock)?;
        flow.schedule = ck.schedule;
        *out = Box::into_raw(Box::new(flow));
        Ok(())
    })
}

/// # Safety
/// `flow` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_free(flow: *mut RhFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Advance to `t_end` on the sample grid. `singular` is set when the run stopped early.
///
/// # Safety
/// `flow` must be a live handle; `singular` writable.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_advance(flow: *mut RhFlow, t_end: f64, singular: *mut bool) -> RhStatus {
    guard(|| {
        let flow = mut_arg(flow, "flow")?;
        let singular = mut_arg(singular, "singular")?;
        if flow.singular {
            return Err(RhError::InvalidArgument("the flow already ended at a singularity".into()).into());
        }
        if t_end.is_nan() || t_end < flow.state.t {
            return Err(RhError::InvalidArgument(format!("t_end = {t_end} precedes the current time")).into());
        }
        let traj = resume_with(&flow.state, flow.clock, &flow.schedule, t_end, &flow.policy, |_, _| Ok(()))?;
        flow.clock.index += traj.samples.len() - 1;
        match traj.singularity {
            Some(s) => {
                flow.state = s.last_state;
                flow.singular = true;
            }
            None => flow.state = traj.samples.last().expect("initial sample").clone(),
        }
        *singular = flow.singular;
        Ok(())
    })
}

/// # Safety
/// `flow` must be a live handle; `t` writable.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_time(flow: *const RhFlow, t: *mut f64) -> RhStatus {
    guard(|| {
        *mut_arg(t, "t")? = ref_arg(flow, "flow")?.state.t;
        Ok(())
    })
}

/// # Safety
/// `flow` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_diagnostics(flow: *const RhFlow, out: *mut RhDiagnostics) -> RhStatus {
    guard(|| {
        let flow = ref_arg(flow, "flow")?;
        let out = mut_arg(out, "out")?;
        let d = diagnostics(&flow.state, flow.schedule.value(flow.state.t))?;
        *out = RhDiagnostics {
            t: d.t,
            vol: d.vol,
            s_min: d.s_min,
            s_max: d.s_max,
            sup_grad_phi_sq: d.sup_grad_phi_sq,
            sup_rm: d.sup_rm,
        };
        Ok(())
    })
}

/// Write the current state as a checkpoint.
///
/// # Safety
/// `flow` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rh_flow_save(flow: *const RhFlow, path: *const c_char) -> RhStatus {
    guard(|| {
        let flow = ref_arg(flow, "flow")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        if flow.singular {
            return Err(RhError::InvalidArgument("a singular state is not on the sample grid".into()).into());
        }
        let ck = Checkpoint {
            state: CheckpointState::Grid(flow.state.clone()),
            schedule: flow.schedule.clone(),
            clock: flow.clock,
            rng: RngState { seed: flow.seed, word_pos: 0 },
        };
        ck.save(&path)?;
        Ok(())
    })
}
