//! C ABI over the qengine simulator.
//!
//! Objects are opaque handles created by `*_new`/`qe_run_cycle` and released
//! with the matching `*_free`. Every fallible call returns a [`QeStatus`];
//! on failure [`qe_last_error`] describes the problem. Undefined
//! efficiencies are reported as NaN. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use qengine::cli::RunConfig;
use qengine::engine::{optimize_transfer_time, run_cycle, CycleRecord, TransferScan};
use qengine::opalg::{number, C64};
use qengine::sideband::{fit_populations, response_curves};
use qengine::thermo;
use qengine::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownKey = 3,
    InvalidState = 4,
    IntegrationDiverged = 5,
    Truncation = 6,
    IllPosedFit = 7,
    UndefinedEfficiency = 8,
    OutOfRange = 9,
    Io = 10,
    Panic = 11,
}

/// Engine parameters. Create with [`qe_params_new`].
pub struct QeParams {
    cfg: RunConfig,
}

/// A completed cycle. Create with [`qe_run_cycle`].
pub struct QeCycle {
    record: CycleRecord,
    series: Vec<QeSnapshot>,
}

/// Cycle summary; `eta_c` and `eta_m` are NaN when undefined.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QeSummary {
    pub t_gate_us: f64,
    pub tau3_us: f64,
    pub delta_n_o: f64,
    pub delta_n_t: f64,
    pub eta_c: f64,
    pub w_exact: f64,
    pub w_diag: f64,
    pub eta_m: f64,
}

/// One recorded instant of a cycle.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QeSnapshot {
    pub stroke: u8,
    pub t_us: f64,
    pub p_ss: f64,
    pub p_sd_plus_ds: f64,
    pub p_dd: f64,
    pub n_b: f64,
    pub n_c: f64,
    pub concurrence: f64,
    pub ms_fidelity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> QeStatus {
    match err {
        Error::Stroke { source, .. } => status_of(source),
        Error::IntegrationDiverged { .. } => QeStatus::IntegrationDiverged,
        Error::Truncation(_) => QeStatus::Truncation,
        Error::IllPosedFit { .. } => QeStatus::IllPosedFit,
        Error::UndefinedEfficiency { .. } => QeStatus::UndefinedEfficiency,
        Error::InvalidState(_) | Error::UnsupportedKind(_) | Error::IncompleteRecord(_) => QeStatus::InvalidState,
        Error::Io { .. } => QeStatus::Io,
        _ => QeStatus::InvalidArgument,
    }
}

fn fail(status: QeStatus, msg: impl Into<String>) -> QeStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> QeStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

/// Runs `f`, converting panics into [`QeStatus::Panic`].
fn guard(f: impl FnOnce() -> QeStatus) -> QeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == QeStatus::Ok {
                set_error("");
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(QeStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn key_str<'a>(key: *const c_char) -> Result<&'a str, QeStatus> {
    if key.is_null() {
        return Err(fail(QeStatus::NullPointer, "key is null"));
    }
    CStr::from_ptr(key)
        .to_str()
        .map_err(|_| fail(QeStatus::InvalidArgument, "key is not valid UTF-8"))
}

/// Message for the last failed call on this thread. Valid until the next
/// call into the library from the same thread; never null.
#[no_mangle]
pub extern "C" fn qe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New parameter set holding the defaults. Free with [`qe_params_free`].
#[no_mangle]
pub extern "C" fn qe_params_new() -> *mut QeParams {
    Box::into_raw(Box::new(QeParams {
        cfg: RunConfig::default(),
    }))
}

/// # Safety
/// `params` must come from [`qe_params_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qe_params_free(params: *mut QeParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

const INTEGER_KEYS: [&str; 4] = [
    "engine.n_breath",
    "engine.n_com",
    "engine.ramp_down_steps",
    "engine.ramp_up_steps",
];
const AUTO_KEYS: [&str; 2] = ["engine.delta_khz", "engine.gamma_eff"];

/// Sets an `engine.*` key. NaN selects the derived default for
/// `engine.delta_khz` and `engine.gamma_eff`; `engine.propagation` takes
/// 0 (factored) or 1 (full). The parameter set is validated and left
/// unchanged on failure.
///
/// # Safety
/// `params` must be a live handle and `key` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qe_params_set(params: *mut QeParams, key: *const c_char, value: f64) -> QeStatus {
    guard(|| {
        let Some(params) = params.as_mut() else {
            return fail(QeStatus::NullPointer, "params is null");
        };
        let key = match key_str(key) {
            Ok(k) => k,
            Err(s) => return s,
        };
        if !key.starts_with("engine.") || params.cfg.value(key).is_none() {
            return fail(QeStatus::UnknownKey, format!("unknown key `{key}`"));
        }
        let text = if AUTO_KEYS.contains(&key) && value.is_nan() {
            "auto".to_string()
        } else if key == "engine.propagation" {
            match value {
                0.0 => "factored".into(),
                1.0 => "full".into(),
                _ => return fail(QeStatus::InvalidArgument, "engine.propagation takes 0 or 1"),
            }
        } else if INTEGER_KEYS.contains(&key) {
            if !(value >= 0.0 && value.fract() == 0.0 && value < 1e9) {
                return fail(QeStatus::InvalidArgument, format!("`{key}` needs a non-negative integer"));
            }
            format!("{}", value as u64)
        } else {
            format!("{value:e}")
        };
        let mut next = params.cfg.clone();
        if let Err(m) = next.set_value(key, &text) {
            return fail(QeStatus::InvalidArgument, format!("`{key}`: {m}"));
        }
        if let Err(e) = next.engine.validate() {
            return from_error(e);
        }
        params.cfg = next;
        QeStatus::Ok
    })
}

/// Reads an `engine.*` key (NaN for a derived default).
///
/// # Safety
/// `params` must be a live handle, `key` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_params_get(params: *const QeParams, key: *const c_char, out: *mut f64) -> QeStatus {
    guard(|| {
        let (Some(params), false) = (params.as_ref(), out.is_null()) else {
            return fail(QeStatus::NullPointer, "null argument");
        };
        let key = match key_str(key) {
            Ok(k) => k,
            Err(s) => return s,
        };
        let Some(text) = params.cfg.value(key).filter(|_| key.starts_with("engine.")) else {
            return fail(QeStatus::UnknownKey, format!("unknown key `{key}`"));
        };
        let v = match text.as_str() {
            "auto" => f64::NAN,
            "factored" => 0.0,
            "full" => 1.0,
            t => match t.parse() {
                Ok(v) => v,
                Err(_) => return fail(QeStatus::InvalidState, format!("`{key}` holds `{t}`")),
            },
        };
        *out = v;
        QeStatus::Ok
    })
}

/// Closed-loop gate time `2π/δ` in μs.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_params_gate_time(params: *const QeParams, out: *mut f64) -> QeStatus {
    guard(|| {
        let (Some(params), false) = (params.as_ref(), out.is_null()) else {
            return fail(QeStatus::NullPointer, "null argument");
        };
        *out = params.cfg.engine.gate_time();
        QeStatus::Ok
    })
}

/// Runs one cycle. On success `*out` receives a handle to free with
/// [`qe_cycle_free`]; on failure it is set to null.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_run_cycle(
    params: *const QeParams,
    t_gate_us: f64,
    tau3_us: f64,
    out: *mut *mut QeCycle,
) -> QeStatus {
    guard(|| {
        if out.is_null() {
            return fail(QeStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(params) = params.as_ref() else {
            return fail(QeStatus::NullPointer, "params is null");
        };
        match run_cycle(&params.cfg.engine, t_gate_us, tau3_us) {
            Ok(record) => {
                let series = record
                    .strokes
                    .iter()
                    .flat_map(|s| {
                        s.series.iter().map(move |x| QeSnapshot {
                            stroke: s.id,
                            t_us: x.t_us,
                            p_ss: x.populations.ss,
                            p_sd_plus_ds: x.populations.sd_plus_ds(),
                            p_dd: x.populations.dd,
                            n_b: x.n_b,
                            n_c: x.n_c,
                            concurrence: x.concurrence,
                            ms_fidelity: x.ms_fidelity,
                        })
                    })
                    .collect();
                *out = Box::into_raw(Box::new(QeCycle { record, series }));
                QeStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `cycle` must come from [`qe_run_cycle`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qe_cycle_free(cycle: *mut QeCycle) {
    if !cycle.is_null() {
        drop(Box::from_raw(cycle));
    }
}

/// # Safety
/// `cycle` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_cycle_summary(cycle: *const QeCycle, out: *mut QeSummary) -> QeStatus {
    guard(|| {
        let (Some(cycle), false) = (cycle.as_ref(), out.is_null()) else {
            return fail(QeStatus::NullPointer, "null argument");
        };
        let r = &cycle.record;
        let s = &r.summary;
        *out = QeSummary {
            t_gate_us: r.t_gate_us,
            tau3_us: r.tau3_us,
            delta_n_o: s.delta_n_o,
            delta_n_t: s.delta_n_t,
            eta_c: s.eta_c.unwrap_or(f64::NAN),
            w_exact: s.w_exact,
            w_diag: s.w_diag,
            eta_m: s.eta_m.unwrap_or(f64::NAN),
        };
        QeStatus::Ok
    })
}

/// Number of recorded snapshots across all strokes (0 for a null handle).
///
/// # Safety
/// `cycle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qe_cycle_series_len(cycle: *const QeCycle) -> usize {
    cycle.as_ref().map_or(0, |c| c.series.len())
}

/// # Safety
/// `cycle` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_cycle_snapshot(cycle: *const QeCycle, index: usize, out: *mut QeSnapshot) -> QeStatus {
    guard(|| {
        let (Some(cycle), false) = (cycle.as_ref(), out.is_null()) else {
            return fail(QeStatus::NullPointer, "null argument");
        };
        match cycle.series.get(index) {
            Some(s) => {
                *out = *s;
                QeStatus::Ok
            }
            None => fail(
                QeStatus::OutOfRange,
                format!("snapshot {index} of {}", cycle.series.len()),
            ),
        }
    })
}

/// Scans the transfer duration over `[lo_us, hi_us]` in steps of `step_us`.
///
/// # Safety
/// `params` must be a live handle; `tau_star` and `delta_n_t` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_optimize_transfer_time(
    params: *const QeParams,
    t_gate_us: f64,
    lo_us: f64,
    hi_us: f64,
    step_us: f64,
    tau_star: *mut f64,
    delta_n_t: *mut f64,
) -> QeStatus {
    guard(|| {
        let (Some(params), false, false) = (params.as_ref(), tau_star.is_null(), delta_n_t.is_null()) else {
            return fail(QeStatus::NullPointer, "null argument");
        };
        let scan = TransferScan {
            lo: lo_us,
            hi: hi_us,
            step: step_us,
        };
        match optimize_transfer_time(&params.cfg.engine, t_gate_us, scan) {
            Ok(o) => {
                *tau_star = o.tau_star;
                *delta_n_t = o.delta_n_t;
                QeStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

unsafe fn complex_matrix(re: *const f64, im: *const f64, dim: usize) -> Result<DMatrix<C64>, QeStatus> {
    if re.is_null() {
        return Err(fail(QeStatus::NullPointer, "re is null"));
    }
    if dim == 0 || dim > 4096 {
        return Err(fail(QeStatus::InvalidArgument, format!("dimension {dim} out of range")));
    }
    let n = dim * dim;
    let re = std::slice::from_raw_parts(re, n);
    let im = if im.is_null() { None } else { Some(std::slice::from_raw_parts(im, n)) };
    Ok(DMatrix::from_fn(dim, dim, |i, j| {
        let k = i * dim + j;
        C64::new(re[k], im.map_or(0.0, |im| im[k]))
    }))
}

/// Ergotropy of a load density matrix under `H = a†a`, in units of the
/// mode quantum. `re`/`im` are row-major `dim × dim`; `im` may be null.
///
/// # Safety
/// `re` (and `im` if non-null) must hold `dim*dim` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_ergotropy(re: *const f64, im: *const f64, dim: usize, out: *mut f64) -> QeStatus {
    guard(|| {
        if out.is_null() {
            return fail(QeStatus::NullPointer, "out is null");
        }
        let rho = match complex_matrix(re, im, dim) {
            Ok(m) => m,
            Err(s) => return s,
        };
        match number(dim).and_then(|h| thermo::ergotropy(&rho, &h)) {
            Ok(w) => {
                *out = w;
                QeStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Wootters concurrence of a two-qubit density matrix (row-major 4 × 4,
/// basis SS, SD, DS, DD); `im` may be null.
///
/// # Safety
/// `re` (and `im` if non-null) must hold 16 values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qe_concurrence(re: *const f64, im: *const f64, out: *mut f64) -> QeStatus {
    guard(|| {
        if out.is_null() {
            return fail(QeStatus::NullPointer, "out is null");
        }
        let rho = match complex_matrix(re, im, 4) {
            Ok(m) => m,
            Err(s) => return s,
        };
        match thermo::concurrence(&rho) {
            Ok(c) => {
                *out = c;
                QeStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Fits phonon populations `P_0..P_nmax` to a blue-sideband signal sampled at
/// `times`. `probs` must have room for `nmax + 1` values; `residual` may be
/// null.
///
/// # Safety
/// `times` and `signal` must hold `len` values, `probs` `nmax + 1`.
#[no_mangle]
pub unsafe extern "C" fn qe_fit_populations(
    params: *const QeParams,
    times: *const f64,
    signal: *const f64,
    len: usize,
    nmax: usize,
    probs: *mut f64,
    residual: *mut f64,
) -> QeStatus {
    guard(|| {
        let Some(params) = params.as_ref() else {
            return fail(QeStatus::NullPointer, "params is null");
        };
        if times.is_null() || signal.is_null() || probs.is_null() {
            return fail(QeStatus::NullPointer, "null buffer");
        }
        if len == 0 {
            return fail(QeStatus::InvalidArgument, "no samples");
        }
        let times = std::slice::from_raw_parts(times, len);
        let signal = std::slice::from_raw_parts(signal, len);
        let fit = match response_curves(nmax, times, &params.cfg.engine)
            .and_then(|basis| fit_populations(signal, &basis, None))
        {
            Ok(f) => f,
            Err(e) => return from_error(e),
        };
        let out = std::slice::from_raw_parts_mut(probs, nmax + 1);
        out.copy_from_slice(fit.dist.probs());
        if let Some(r) = residual.as_mut() {
            *r = fit.residual;
        }
        QeStatus::Ok
    })
}
