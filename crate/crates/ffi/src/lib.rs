//! C ABI over `bayesrm`.
//!
//! Conventions:
//!
//! * Every function returns a [`BayesrmStatus`]; results go through out
//!   pointers, which are written only on success.
//! * On failure a message is stored per thread and can be read with
//!   [`bayesrm_last_error`].
//! * Models and posteriors are opaque handles created by `*_load` or
//!   `*_from_json` and released with the matching `*_free`.
//! * Strings are NUL-terminated UTF-8. Arrays are `(pointer, length)` pairs;
//!   a null pointer is accepted only when the length is zero.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use bayesrm::bon::{bon_expected_reward, bon_weights, kl_bon};
use bayesrm::io::{self, ModelCheckpoint, PosteriorFile};
use bayesrm::laplace::{predictive_reward, PosteriorState, RewardDistribution};
use bayesrm::reward_model::RewardNet;
use bayesrm::scoring::{ensemble_penalized_reward, penalized_reward, Penalty, PenaltyKind};
use bayesrm::synthetic::FORMAT_VERSION;
use bayesrm::Error;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayesrmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Usage = 3,
    Io = 4,
    Schema = 5,
    Version = 6,
    Shape = 7,
    Numerical = 8,
    StalePosterior = 9,
    UnknownEvaluator = 10,
    ExceedsPool = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

pub const BAYESRM_PENALTY_NONE: i32 = 0;
pub const BAYESRM_PENALTY_STD: i32 = 1;
pub const BAYESRM_PENALTY_VAR: i32 = 2;

/// Reward network loaded from a checkpoint.
pub struct BayesrmModel {
    net: RewardNet,
}

/// Laplace posterior loaded from a posterior document.
pub struct BayesrmPosterior {
    state: PosteriorState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(BayesrmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Usage(_) => BayesrmStatus::Usage,
            Error::Io { .. } => BayesrmStatus::Io,
            Error::Schema { .. } => BayesrmStatus::Schema,
            Error::Version { .. } => BayesrmStatus::Version,
            Error::Shape(_) => BayesrmStatus::Shape,
            Error::StalePosterior(_) => BayesrmStatus::StalePosterior,
            Error::UnknownEvaluator(_) => BayesrmStatus::UnknownEvaluator,
            Error::ExceedsPool { .. } => BayesrmStatus::ExceedsPool,
            _ => BayesrmStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: BayesrmStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BayesrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BayesrmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            BayesrmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(BayesrmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BayesrmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BayesrmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(BayesrmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(fail(BayesrmStatus::NullPointer, format!("{what} is null")));
    }
    p.write(value);
    Ok(())
}

fn penalty_arg(kind: i32, k: f64) -> Result<Penalty, Failure> {
    let kind = match kind {
        BAYESRM_PENALTY_NONE => PenaltyKind::None,
        BAYESRM_PENALTY_STD => PenaltyKind::Std,
        BAYESRM_PENALTY_VAR => PenaltyKind::Var,
        other => return Err(fail(BayesrmStatus::Usage, format!("unknown penalty kind {other}"))),
    };
    Ok(Penalty::new(kind, k)?)
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bayesrm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Version of the on-disk document formats this library reads and writes.
#[no_mangle]
pub extern "C" fn bayesrm_format_version() -> u32 {
    FORMAT_VERSION
}

fn model_from_text(origin: &Path, text: &str) -> Result<BayesrmModel, Failure> {
    let ckpt: ModelCheckpoint = io::parse_versioned(origin, text, FORMAT_VERSION)?;
    Ok(BayesrmModel { net: ckpt.to_net()? })
}

/// Loads a model checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_model_load(path: *const c_char, out: *mut *mut BayesrmModel) -> BayesrmStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let model = model_from_text(path, &io::read_text(path)?)?;
        write_out(out, Box::into_raw(Box::new(model)), "out")
    })
}

/// Parses a model checkpoint from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_model_from_json(json: *const c_char, out: *mut *mut BayesrmModel) -> BayesrmStatus {
    guard(|| {
        let model = model_from_text(Path::new("<json>"), str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(model)), "out")
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a model constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_model_free(model: *mut BayesrmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_model_input_dim(model: *const BayesrmModel, out: *mut usize) -> BayesrmStatus {
    guard(|| write_out(out, ref_arg(model, "model")?.net.input_dim(), "out"))
}

/// Number of trainable parameters.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_model_param_count(model: *const BayesrmModel, out: *mut usize) -> BayesrmStatus {
    guard(|| write_out(out, ref_arg(model, "model")?.net.param_count(), "out"))
}

/// Scalar reward of one feature vector.
///
/// # Safety
/// `x` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_model_forward(
    model: *const BayesrmModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> BayesrmStatus {
    guard(|| {
        let r = ref_arg(model, "model")?.net.forward(slice_arg(x, len, "x")?)?;
        write_out(out, r, "out")
    })
}

fn posterior_from_text(origin: &Path, text: &str) -> Result<BayesrmPosterior, Failure> {
    let file: PosteriorFile = io::parse_versioned(origin, text, FORMAT_VERSION)?;
    Ok(BayesrmPosterior {
        state: file.to_state()?,
    })
}

/// Loads a posterior document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_posterior_load(path: *const c_char, out: *mut *mut BayesrmPosterior) -> BayesrmStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let post = posterior_from_text(path, &io::read_text(path)?)?;
        write_out(out, Box::into_raw(Box::new(post)), "out")
    })
}

/// Parses a posterior document from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_posterior_from_json(
    json: *const c_char,
    out: *mut *mut BayesrmPosterior,
) -> BayesrmStatus {
    guard(|| {
        let post = posterior_from_text(Path::new("<json>"), str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(post)), "out")
    })
}

/// Releases a posterior. Null is ignored.
///
/// # Safety
/// `posterior` must come from a posterior constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_posterior_free(posterior: *mut BayesrmPosterior) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

/// Linearized predictive mean and variance. Fails with
/// `STALE_POSTERIOR` unless the model's parameters are exactly the
/// posterior's MAP estimate.
///
/// # Safety
/// Handles must be live; `x` must point to `len` doubles; `mean` and
/// `variance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_predictive_reward(
    posterior: *const BayesrmPosterior,
    model: *const BayesrmModel,
    x: *const f64,
    len: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> BayesrmStatus {
    guard(|| {
        let post = ref_arg(posterior, "posterior")?;
        let model = ref_arg(model, "model")?;
        if mean.is_null() || variance.is_null() {
            return Err(fail(BayesrmStatus::NullPointer, "mean or variance is null"));
        }
        let d = predictive_reward(&post.state, &model.net, slice_arg(x, len, "x")?)?;
        write_out(mean, d.mean, "mean")?;
        write_out(variance, d.variance, "variance")
    })
}

/// `mean − k·√variance` (std) or `mean − k·variance` (var).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_penalized_reward(
    mean: f64,
    variance: f64,
    kind: i32,
    k: f64,
    out: *mut f64,
) -> BayesrmStatus {
    guard(|| {
        let d = RewardDistribution::new(mean, variance)?;
        write_out(out, penalized_reward(&d, penalty_arg(kind, k)?)?, "out")
    })
}

/// Penalized reward of the fused ensemble Gaussian.
///
/// # Safety
/// `means` and `variances` must each point to `count` doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_ensemble_penalized_reward(
    means: *const f64,
    variances: *const f64,
    count: usize,
    kind: i32,
    k: f64,
    out: *mut f64,
) -> BayesrmStatus {
    guard(|| {
        let means = slice_arg(means, count, "means")?;
        let variances = slice_arg(variances, count, "variances")?;
        let members = means
            .iter()
            .zip(variances)
            .map(|(&m, &v)| RewardDistribution::new(m, v))
            .collect::<Result<Vec<_>, _>>()?;
        write_out(out, ensemble_penalized_reward(&members, penalty_arg(kind, k)?)?, "out")
    })
}

/// `ln n − (n − 1)/n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_kl_bon(n: usize, out: *mut f64) -> BayesrmStatus {
    guard(|| write_out(out, kl_bon(n)?, "out"))
}

/// Writes the `pool_size` best-of-n rank weights (ascending rank order)
/// into `out`, which must hold at least `pool_size` doubles.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_bon_weights(
    pool_size: usize,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> BayesrmStatus {
    guard(|| {
        let w = bon_weights(pool_size, n)?;
        if out_len < w.len() {
            return Err(fail(
                BayesrmStatus::BufferTooSmall,
                format!("output holds {out_len} values, {} needed", w.len()),
            ));
        }
        if out.is_null() {
            return Err(fail(BayesrmStatus::NullPointer, "out is null"));
        }
        std::slice::from_raw_parts_mut(out, w.len()).copy_from_slice(&w);
        Ok(())
    })
}

/// Exact expected `eval` score of the best-of-n response under `ranking`,
/// over all size-`n` subsets of one prompt's pool.
///
/// # Safety
/// `ranking` and `eval` must each point to `len` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bayesrm_bon_expected_reward(
    ranking: *const f64,
    eval: *const f64,
    len: usize,
    n: usize,
    out: *mut f64,
) -> BayesrmStatus {
    guard(|| {
        let r = bon_expected_reward(slice_arg(ranking, len, "ranking")?, slice_arg(eval, len, "eval")?, n)?;
        write_out(out, r, "out")
    })
}
