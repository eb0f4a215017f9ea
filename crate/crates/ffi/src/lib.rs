//! C ABI over `gplan`: load or generate tasks, load checkpoints, search,
//! validate plans.
//!
//! All objects are opaque heap handles released with their `*_free`
//! function. Every fallible call returns a [`GplanStatus`]; on failure the
//! message is available from [`gplan_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gplan::agent::PolicyModel;
use gplan::cli::{solve, Engine};
use gplan::grounding::{format_plan, ground_all, parse_plan, GroundTask};
use gplan::pddl::{parse_domain, parse_problem};
use gplan::search::{optimal_plan_length, validate_plan, OracleOutcome, SearchBudget};
use gplan::worlds::{generate, DomainKind, InstanceSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GplanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    Model = 5,
    InvalidArgument = 6,
    NoPlan = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GplanDomain {
    Simple = 0,
    Scan = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GplanEngine {
    Gnn = 0,
    Baseline = 1,
    Policy = 2,
}

/// A grounded planning task.
pub struct GplanTask {
    task: GroundTask,
}

/// A trained policy/value model.
pub struct GplanModel {
    model: PolicyModel,
}

/// Search outcome; owns the plan text.
pub struct GplanResult {
    success: bool,
    plan_len: usize,
    expanded: usize,
    generated: usize,
    elapsed_ms: f64,
    text: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

type FfiResult<T> = Result<T, (GplanStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> GplanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GplanStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GplanStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((GplanStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GplanStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| (GplanStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> FfiResult<*mut T> {
    if p.is_null() {
        Err((GplanStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(p)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gplan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread ("" after a success).
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn gplan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses and grounds a domain/problem pair given as PDDL text.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gplan_task_from_pddl(
    domain_pddl: *const c_char,
    problem_pddl: *const c_char,
    out: *mut *mut GplanTask,
) -> GplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = str_arg(domain_pddl, "domain_pddl")?;
        let p = str_arg(problem_pddl, "problem_pddl")?;
        let domain = parse_domain(d).map_err(|e| (GplanStatus::Parse, format!("domain: {e}")))?;
        let problem = parse_problem(p, &domain).map_err(|e| (GplanStatus::Parse, format!("problem: {e}")))?;
        let task = ground_all(&domain, &problem);
        *out = Box::into_raw(Box::new(GplanTask { task }));
        Ok(())
    })
}

/// Generates a droneworld instance. `targets` is ignored for the simple
/// domain.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gplan_task_generate(
    domain: GplanDomain,
    width: usize,
    density: f64,
    targets: usize,
    seed: u64,
    out: *mut *mut GplanTask,
) -> GplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (kind, spec) = match domain {
            GplanDomain::Simple => (DomainKind::Simple, InstanceSpec::simple(width, density, seed)),
            GplanDomain::Scan => (DomainKind::Scan, InstanceSpec::scan(width, density, targets, seed)),
        };
        let inst = generate(kind, &spec).map_err(|e| (GplanStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(GplanTask { task: inst.task }));
        Ok(())
    })
}

/// Number of ground actions (0 for a null task).
///
/// # Safety
/// `task` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_task_num_actions(task: *const GplanTask) -> usize {
    task.as_ref().map_or(0, |t| t.task.actions.len())
}

/// # Safety
/// `task` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gplan_task_free(task: *mut GplanTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gplan_model_load(path: *const c_char, out: *mut *mut GplanModel) -> GplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let model = PolicyModel::load(Path::new(path)).map_err(|e| {
            let status = if Path::new(path).exists() {
                GplanStatus::Model
            } else {
                GplanStatus::Io
            };
            (status, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(GplanModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gplan_model_free(model: *mut GplanModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Searches for a plan. `model` may be null for the baseline engine.
/// `max_seconds <= 0` means no time limit. A result is produced whether or
/// not a plan was found; check [`gplan_result_success`].
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gplan_solve(
    task: *const GplanTask,
    model: *const GplanModel,
    engine: GplanEngine,
    max_expansions: usize,
    max_seconds: f64,
    out: *mut *mut GplanResult,
) -> GplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let task = &ref_arg(task, "task")?.task;
        let model = model.as_ref().map(|m| &m.model);
        let engine = match engine {
            GplanEngine::Gnn => Engine::Gnn,
            GplanEngine::Baseline => Engine::Baseline,
            GplanEngine::Policy => Engine::Policy,
        };
        if engine != Engine::Baseline && model.is_none() {
            return Err((GplanStatus::NullPointer, "model is null".into()));
        }
        let budget = SearchBudget {
            max_expansions,
            max_seconds: if max_seconds > 0.0 { max_seconds } else { f64::INFINITY },
        };
        let r = solve(task, model, engine, budget).map_err(|e| (GplanStatus::Model, e))?;
        let text = r.plan.as_ref().map(|p| format_plan(task, p)).unwrap_or_default();
        *out = Box::into_raw(Box::new(GplanResult {
            success: r.success,
            plan_len: r.plan.as_ref().map_or(0, Vec::len),
            expanded: r.expanded,
            generated: r.generated,
            elapsed_ms: r.elapsed_ms,
            text: CString::new(text).expect("plan text has no NUL"),
        }));
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_success(r: *const GplanResult) -> bool {
    r.as_ref().is_some_and(|r| r.success)
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_plan_len(r: *const GplanResult) -> usize {
    r.as_ref().map_or(0, |r| r.plan_len)
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_expanded(r: *const GplanResult) -> usize {
    r.as_ref().map_or(0, |r| r.expanded)
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_generated(r: *const GplanResult) -> usize {
    r.as_ref().map_or(0, |r| r.generated)
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_elapsed_ms(r: *const GplanResult) -> f64 {
    r.as_ref().map_or(0.0, |r| r.elapsed_ms)
}

/// Plan text, one `(action args...)` per line; "" when no plan was found.
/// Owned by the result.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_plan_text(r: *const GplanResult) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.text.as_ptr())
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gplan_result_free(r: *mut GplanResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Checks a plan given as text. `*valid` is set to whether the plan applies
/// from the initial state and reaches the goal; `*failed_step` to the first
/// failing step (or the plan length when only the goal is missed), and to
/// -1 for a valid plan.
///
/// # Safety
/// `task` must be live; `plan_text` NUL-terminated; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn gplan_validate_plan(
    task: *const GplanTask,
    plan_text: *const c_char,
    valid: *mut bool,
    failed_step: *mut i64,
) -> GplanStatus {
    guard(|| {
        let valid = out_arg(valid, "valid")?;
        let failed_step = out_arg(failed_step, "failed_step")?;
        let task = &ref_arg(task, "task")?.task;
        let text = str_arg(plan_text, "plan_text")?;
        let plan = parse_plan(task, text).map_err(|e| (GplanStatus::Parse, e.to_string()))?;
        let v = validate_plan(task, &plan);
        *valid = v.is_valid();
        *failed_step = v.failed_step().map_or(-1, |i| i as i64);
        Ok(())
    })
}

/// Breadth-first optimal plan length; `*length` is -1 when the goal is
/// unreachable. Exploring more than `max_states` states is an error.
///
/// # Safety
/// `task` must be live; `length` writable.
#[no_mangle]
pub unsafe extern "C" fn gplan_optimal_plan_length(
    task: *const GplanTask,
    max_states: usize,
    length: *mut i64,
) -> GplanStatus {
    guard(|| {
        let length = out_arg(length, "length")?;
        let task = &ref_arg(task, "task")?.task;
        *length = match optimal_plan_length(task, max_states) {
            Ok(OracleOutcome::Length(n)) => n as i64,
            Ok(OracleOutcome::Unreachable) => -1,
            Err(e) => return Err((GplanStatus::InvalidArgument, e.to_string())),
        };
        Ok(())
    })
}
