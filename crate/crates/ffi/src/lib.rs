//! C ABI over the simulator.
//!
//! Handles are opaque pointers created by `*_new`/`*_from_json` and released
//! with the matching `*_free`. Every fallible call returns a [`UavbsStatus`];
//! on failure the message is available from [`uavbs_last_error`] on the same
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use uavbs::agent::Variant;
use uavbs::harness::{self, Profile, RunConfig};
use uavbs::metrics::{KpiSnapshot, NormalizationBounds};
use uavbs::rlenv::{score, Evaluator, UavState};
use uavbs::traffic::LoadMode;
use uavbs::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavbsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    Simulation = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavbsProfile {
    Full = 0,
    Fast = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavbsLoad {
    Light = 0,
    Heavy = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavbsVariant {
    AeVas = 0,
    VasRetrained = 1,
    Baseline = 2,
}

/// Six-feature KPI vector; throughputs in bit/s, drop ratios in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UavbsKpi {
    pub dl_tp_50: f64,
    pub dl_tp_5: f64,
    pub ul_tp_50: f64,
    pub ul_tp_5: f64,
    pub dl_drop: f64,
    pub ul_drop: f64,
}

/// One scored UAV state. Pose values are in degrees and metres.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UavbsEvaluation {
    pub state_index: usize,
    pub tilt_deg: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
    pub kpi: UavbsKpi,
    pub normalized: UavbsKpi,
    pub reward: f64,
    pub kpi_valid: bool,
    pub uav_users: usize,
    pub relay_violations: u64,
}

/// Opaque run configuration.
pub struct UavbsConfig {
    inner: RunConfig,
}

/// Opaque simulator: a validated configuration, its evaluation cache and
/// the normalization bounds in effect.
pub struct UavbsSimulator {
    cfg: RunConfig,
    evaluator: Arc<Evaluator>,
    bounds: NormalizationBounds,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UavbsStatus {
    match e {
        Error::Config(_) | Error::Json(_) => UavbsStatus::InvalidConfig,
        Error::InvalidAction(_) | Error::OffGrid(_) | Error::ScheduleExhausted | Error::Invalid(_) => {
            UavbsStatus::InvalidArgument
        }
        Error::Io(_) | Error::Csv(_) => UavbsStatus::Io,
        _ => UavbsStatus::Simulation,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), (UavbsStatus, String)>) -> UavbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UavbsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            UavbsStatus::Panic
        }
    }
}

fn core<T>(r: uavbs::Result<T>) -> Result<T, (UavbsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (UavbsStatus, String) {
    (UavbsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (UavbsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (UavbsStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn load_mode(l: UavbsLoad) -> LoadMode {
    match l {
        UavbsLoad::Light => LoadMode::Light,
        UavbsLoad::Heavy => LoadMode::Heavy,
    }
}

fn kpi(k: &KpiSnapshot) -> UavbsKpi {
    UavbsKpi {
        dl_tp_50: k.dl_tp_50,
        dl_tp_5: k.dl_tp_5,
        ul_tp_50: k.ul_tp_50,
        ul_tp_5: k.ul_tp_5,
        dl_drop: k.dl_drop,
        ul_drop: k.ul_drop,
    }
}

impl UavbsSimulator {
    fn state(&self, index: usize) -> Result<UavState, (UavbsStatus, String)> {
        let n = self.cfg.env.grids.n_states();
        if index >= n {
            return Err((UavbsStatus::InvalidArgument, format!("state index {index} out of range [0, {n})")));
        }
        Ok(self.cfg.env.grids.state_at(index))
    }

    fn score(&self, phase: usize, load: LoadMode, index: usize) -> Result<UavbsEvaluation, (UavbsStatus, String)> {
        let s = self.state(index)?;
        let e = core(self.evaluator.evaluate(phase, load, &s))?;
        let scored = core(score(&e, self.bounds.for_load(load), &self.cfg.env.weights))?;
        let [tilt_deg, x_m, y_m, z_m] = self.cfg.env.grids.values(&s);
        Ok(UavbsEvaluation {
            state_index: index,
            tilt_deg,
            x_m,
            y_m,
            z_m,
            kpi: kpi(&scored.kpi),
            normalized: kpi(&scored.normalized),
            reward: scored.reward,
            kpi_valid: e.kpi_valid,
            uav_users: e.uav_users,
            relay_violations: e.relay_violations,
        })
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uavbs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uavbs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default configuration for a profile.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn uavbs_config_new(profile: UavbsProfile, out: *mut *mut UavbsConfig) -> UavbsStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let p = match profile {
            UavbsProfile::Full => Profile::Full,
            UavbsProfile::Fast => Profile::Fast,
        };
        *out = Box::into_raw(Box::new(UavbsConfig { inner: RunConfig::for_profile(p) }));
        Ok(())
    })
}

/// Parses and validates a JSON configuration. Missing keys take defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_config_from_json(json: *const c_char, out: *mut *mut UavbsConfig) -> UavbsStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| (UavbsStatus::InvalidUtf8, e.to_string()))?;
        let cfg = core(harness::parse_config(text))?;
        core(cfg.validate())?;
        *out = Box::into_raw(Box::new(UavbsConfig { inner: cfg }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uavbs_config_set_seed(cfg: *mut UavbsConfig, seed: u64) -> UavbsStatus {
    guard(|| {
        deref_mut(cfg, "cfg")?.inner.seed = seed;
        Ok(())
    })
}

/// Serializes the configuration as pretty JSON. Release the string with
/// [`uavbs_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_config_to_json(cfg: *const UavbsConfig, out: *mut *mut c_char) -> UavbsStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        let out = deref_mut(out, "out")?;
        let json = core(serde_json::to_string_pretty(&cfg.inner).map_err(Error::from))?;
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uavbs_config_free(cfg: *mut UavbsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uavbs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a simulator from a configuration. The configuration is copied, so
/// `cfg` may be freed afterwards. Normalization bounds are derived here when
/// the configuration does not fix them, which sweeps phase 0 for both loads.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_new(cfg: *const UavbsConfig, out: *mut *mut UavbsSimulator) -> UavbsStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?.inner.clone();
        let out = deref_mut(out, "out")?;
        core(cfg.validate())?;
        let evaluator = core(cfg.evaluator())?;
        let bounds = core(harness::resolve_bounds(&cfg, &evaluator))?;
        *out = Box::into_raw(Box::new(UavbsSimulator { cfg, evaluator, bounds }));
        Ok(())
    })
}

/// # Safety
/// `sim` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_free(sim: *mut UavbsSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Number of candidate states; 0 for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_n_states(sim: *const UavbsSimulator) -> usize {
    sim.as_ref().map_or(0, |s| s.cfg.env.grids.n_states())
}

/// Number of mobility phases in the schedule; 0 for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_n_phases(sim: *const UavbsSimulator) -> usize {
    sim.as_ref().map_or(0, |s| s.cfg.env.schedule.n_phases)
}

/// Index of the grid state with exactly these values.
///
/// # Safety
/// `sim` must be a live handle; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_locate(
    sim: *const UavbsSimulator,
    tilt_deg: f64,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    out_index: *mut usize,
) -> UavbsStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        let out = deref_mut(out_index, "out_index")?;
        let grids = &sim.cfg.env.grids;
        let s = core(grids.locate(tilt_deg, x_m, y_m, z_m))?;
        *out = grids.index_of(&s);
        Ok(())
    })
}

/// Simulates and scores one grid state.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_evaluate(
    sim: *const UavbsSimulator,
    phase: usize,
    load: UavbsLoad,
    state_index: usize,
    out: *mut UavbsEvaluation,
) -> UavbsStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        let out = deref_mut(out, "out")?;
        *out = sim.score(phase, load_mode(load), state_index)?;
        Ok(())
    })
}

/// Exhaustive sweep of one phase; writes the best-scoring state.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_oracle(
    sim: *const UavbsSimulator,
    phase: usize,
    load: UavbsLoad,
    out: *mut UavbsEvaluation,
) -> UavbsStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        let out = deref_mut(out, "out")?;
        let load = load_mode(load);
        let sweep = core(harness::oracle_sweep(&sim.evaluator, sim.bounds.for_load(load), phase, load))?;
        *out = sim.score(phase, load, sweep.argmax)?;
        Ok(())
    })
}

/// Trains and validates one agent variant over the whole schedule and writes
/// its mean validation reward.
///
/// # Safety
/// `sim` must be a live handle; `out_reward` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavbs_simulator_train(
    sim: *const UavbsSimulator,
    variant: UavbsVariant,
    load: UavbsLoad,
    out_reward: *mut f64,
) -> UavbsStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        let out = deref_mut(out_reward, "out_reward")?;
        let variant = match variant {
            UavbsVariant::AeVas => Variant::AeVas,
            UavbsVariant::VasRetrained => Variant::VasRetrained,
            UavbsVariant::Baseline => Variant::Baseline,
        };
        let load = load_mode(load);
        let exp = core(harness::run_experiment_with(
            &sim.evaluator,
            &sim.cfg.agent,
            sim.cfg.seed,
            &sim.bounds,
            &[variant],
            &[load],
        ))?;
        let run = exp.run(variant, load).expect("requested run present");
        *out = run.validation_summary().1;
        Ok(())
    })
}
