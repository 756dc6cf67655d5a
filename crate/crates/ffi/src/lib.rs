//! C ABI over the `mcclt` library.
//!
//! Conventions: every function returns an [`McStatus`]; results come back
//! through out-pointers. Objects are opaque heap handles released with the
//! matching `*_free`. After a non-OK status, `mcclt_last_error()` describes
//! the failure (the string lives until the next failing call on the same
//! thread).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mcclt::algo::{EpochMetrics, TrainConfig, Trainer};
use mcclt::policy::GaussianPolicy;
use mcclt::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    Runtime = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> McStatus {
    match e {
        Error::Domain(_) | Error::Usage(_) => McStatus::InvalidArgument,
        Error::Dimension { .. } => McStatus::DimensionMismatch,
        Error::Config(_) | Error::UnsupportedMode(_) => McStatus::Config,
        Error::Io(_) => McStatus::Io,
        Error::Checkpoint(_) => McStatus::Checkpoint,
        Error::InvalidState(_) => McStatus::Runtime,
    }
}

struct Fail(McStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(McStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> McStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            McStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(McStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn check_len(expected: usize, got: usize) -> Result<(), Fail> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got }.into())
    }
}

/// Message for the most recent failure on this thread, or null.
#[no_mangle]
pub extern "C" fn mcclt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcclt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Standard-normal quantiles at `tau_i = (i+1)/(n+1)` written to `out[0..n]`.
///
/// # Safety
/// `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mcclt_z_grid(n: usize, out: *mut f64) -> McStatus {
    guard(|| {
        let dst = slice_mut(out, n, "out")?;
        let z = mcclt::stats::quantile_z_grid(n)?;
        dst.copy_from_slice(z.z());
        Ok(())
    })
}

/// Scheduled variance at step `t` given the mean episode length `l_cur`
/// and mean return `g_cur`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcclt_sigma_sq(l_cur: f64, g_cur: f64, sigma_sq_min: f64, t: f64, out: *mut f64) -> McStatus {
    guard(|| {
        *out_ptr(out)? = mcclt::schedule::sigma_sq_raw(l_cur, g_cur, sigma_sq_min, t)?;
        Ok(())
    })
}

unsafe fn out_ptr<'a>(p: *mut f64) -> Result<&'a mut f64, Fail> {
    out(p, "out")
}

/// Squared gap between `n` bars and their fitted normal, and the resulting
/// weight `sigmoid(-E * temperature) + 0.5`. Either out-pointer may be null.
///
/// # Safety
/// `bars` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mcclt_uncertainty_weight(
    bars: *const f64,
    n: usize,
    temperature: f64,
    error_out: *mut f64,
    weight_out: *mut f64,
) -> McStatus {
    guard(|| {
        let q = slice(bars, n, "bars")?;
        let z = mcclt::stats::quantile_z_grid(n)?;
        let e = mcclt::uncertainty::uncertainty_error(q, &z)?;
        let w = mcclt::uncertainty::uncertainty_weight(e, temperature)?;
        if let Some(p) = error_out.as_mut() {
            *p = e;
        }
        if let Some(p) = weight_out.as_mut() {
            *p = w;
        }
        Ok(())
    })
}

/// Mean quantile Huber loss between `n` predicted and target bars.
///
/// # Safety
/// `pred` and `target` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcclt_quantile_huber_loss(
    pred: *const f64,
    target: *const f64,
    n: usize,
    kappa: f64,
    out: *mut f64,
) -> McStatus {
    guard(|| {
        let p = slice(pred, n, "pred")?;
        let t = slice(target, n, "target")?;
        *out_ptr(out)? = mcclt::dvf::quantile_huber_loss(p, t, kappa)?;
        Ok(())
    })
}

/// Opaque training session.
pub struct McTrainer {
    inner: Trainer,
}

/// Opaque Gaussian policy with its own sampling RNG.
pub struct McPolicy {
    inner: GaussianPolicy,
    rng: ChaCha8Rng,
}

/// Per-epoch summary; mirrors one `metrics.csv` row.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct McEpochMetrics {
    pub epoch: u64,
    pub env_steps: u64,
    pub ep_ret_mean: f64,
    pub ep_ret_min: f64,
    pub ep_ret_max: f64,
    pub ep_len_mean: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub mean_kl: f64,
    pub mean_w: f64,
    pub l_cur: f64,
    pub g_cur: f64,
}

impl From<&EpochMetrics> for McEpochMetrics {
    fn from(m: &EpochMetrics) -> Self {
        McEpochMetrics {
            epoch: m.epoch as u64,
            env_steps: m.env_steps as u64,
            ep_ret_mean: m.ep_ret_mean,
            ep_ret_min: m.ep_ret_min,
            ep_ret_max: m.ep_ret_max,
            ep_len_mean: m.ep_len_mean,
            value_loss: m.value_loss,
            policy_loss: m.policy_loss,
            mean_kl: m.mean_kl,
            mean_w: m.mean_w,
            l_cur: m.l_cur,
            g_cur: m.g_cur,
        }
    }
}

/// Build a trainer from TOML configuration text.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcclt_trainer_new(config_toml: *const c_char, out: *mut *mut McTrainer) -> McStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let cfg = TrainConfig::from_toml_str(string(config_toml, "config_toml")?)?;
        let trainer = Trainer::new(cfg)?;
        *dst = Box::into_raw(Box::new(McTrainer { inner: trainer }));
        Ok(())
    })
}

/// Run one epoch of collection and updates. `metrics` may be null.
///
/// # Safety
/// `trainer` must come from `mcclt_trainer_new`.
#[no_mangle]
pub unsafe extern "C" fn mcclt_trainer_run_epoch(trainer: *mut McTrainer, metrics: *mut McEpochMetrics) -> McStatus {
    guard(|| {
        let t = out(trainer, "trainer")?;
        if t.inner.is_done() {
            return Err(Fail(McStatus::InvalidArgument, "all configured epochs have run".into()));
        }
        let m = t.inner.run_epoch()?;
        if let Some(dst) = metrics.as_mut() {
            *dst = McEpochMetrics::from(&m);
        }
        Ok(())
    })
}

/// Epochs completed so far.
///
/// # Safety
/// `trainer` must come from `mcclt_trainer_new`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcclt_trainer_epoch(trainer: *const McTrainer, out: *mut u64) -> McStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        *self::out(out, "out")? = t.inner.epoch() as u64;
        Ok(())
    })
}

/// Copy the trainer's current policy into a new handle.
///
/// # Safety
/// `trainer` must come from `mcclt_trainer_new`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcclt_trainer_policy(trainer: *const McTrainer, seed: u64, out: *mut *mut McPolicy) -> McStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        *self::out(out, "out")? = new_policy(t.inner.policy().clone(), seed);
        Ok(())
    })
}

/// # Safety
/// `trainer` must come from `mcclt_trainer_new` (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mcclt_trainer_free(trainer: *mut McTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

fn new_policy(p: GaussianPolicy, seed: u64) -> *mut McPolicy {
    Box::into_raw(Box::new(McPolicy {
        inner: p,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }))
}

/// Load a policy checkpoint. `seed` drives sampled actions.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcclt_policy_load(path: *const c_char, seed: u64, out: *mut *mut McPolicy) -> McStatus {
    guard(|| {
        let dst = self::out(out, "out")?;
        let p = mcclt::checkpoint::load_policy(Path::new(string(path, "path")?))?;
        *dst = new_policy(p, seed);
        Ok(())
    })
}

/// Write a policy checkpoint.
///
/// # Safety
/// `policy` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mcclt_policy_save(policy: *const McPolicy, path: *const c_char) -> McStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        mcclt::checkpoint::save_policy(Path::new(string(path, "path")?), &p.inner)?;
        Ok(())
    })
}

/// Observation and action dimensions. Either out-pointer may be null.
///
/// # Safety
/// `policy` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn mcclt_policy_dims(policy: *const McPolicy, obs_dim: *mut usize, act_dim: *mut usize) -> McStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        if let Some(d) = obs_dim.as_mut() {
            *d = p.inner.obs_dim();
        }
        if let Some(d) = act_dim.as_mut() {
            *d = p.inner.act_dim();
        }
        Ok(())
    })
}

/// Act in `state`: the mean action when `deterministic` is non-zero,
/// otherwise a sample from the policy's RNG.
///
/// # Safety
/// `state` must point to `state_len` doubles and `action` to `action_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mcclt_policy_act(
    policy: *mut McPolicy,
    state: *const f64,
    state_len: usize,
    deterministic: i32,
    action: *mut f64,
    action_len: usize,
) -> McStatus {
    guard(|| {
        let p = out(policy, "policy")?;
        check_len(p.inner.obs_dim(), state_len)?;
        check_len(p.inner.act_dim(), action_len)?;
        let s = slice(state, state_len, "state")?;
        let dst = slice_mut(action, action_len, "action")?;
        let a = if deterministic != 0 {
            p.inner.mean_action(s)?
        } else {
            p.inner.sample_action(s, &mut p.rng)?.0
        };
        dst.copy_from_slice(&a);
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mcclt_policy_free(policy: *mut McPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
