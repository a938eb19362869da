//! C ABI over `awa-core`.
//!
//! Every fallible call returns an [`AwaStatus`]; on failure the message is
//! kept per thread and can be read with [`awa_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller releases with the
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use awa_core::attack::{
    rec_attack, AttackConfig, AttackOutcome, AttackProblem, LossKind, QBounds, WeightVectorQ,
};
use awa_core::autodiff::Array;
use awa_core::bayesopt::{awa_optimize, expected_improvement, BoConfig};
use awa_core::cli::load_round;
use awa_core::metrics::{image_metrics, match_batches, split_batch, ImagePair};
use awa_core::Error;

/// Result codes. `AWA_STATUS_OK` is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AwaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ArchitectureMismatch = 5,
    Diverged = 6,
    Numerical = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> AwaStatus {
    match err {
        Error::Io(_) => AwaStatus::Io,
        Error::Format { .. } | Error::Json(_) => AwaStatus::Format,
        Error::ArchitectureMismatch(_) => AwaStatus::ArchitectureMismatch,
        Error::Diverged(_) | Error::AllTrialsDiverged(_) => AwaStatus::Diverged,
        Error::Surrogate(_) | Error::Metric(_) | Error::Autodiff(_) => AwaStatus::Numerical,
        _ => AwaStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (AwaStatus, String)>) -> AwaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AwaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            AwaStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (AwaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AwaStatus, String) {
    (AwaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (AwaStatus, String) {
    (AwaStatus::InvalidArgument, msg.into())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn awa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn awa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A recorded FedAvg round together with its known labels and ground truth.
pub struct AwaRound {
    record: awa_core::fedsim::RoundRecord,
    labels: Vec<usize>,
    truth: Array,
}

/// Reconstruction produced by an attack or a tuning run.
pub struct AwaAttackResult {
    outcome: AttackOutcome,
    q: [f64; 6],
}

/// Attack settings. Start from [`awa_attack_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AwaAttackConfig {
    pub iterations: usize,
    pub lr: f64,
    /// True selects the weighted loss.
    pub weighted: bool,
    /// 1-based epoch attacked when the round has several epochs and mini-batches.
    pub target_epoch: usize,
    pub init_seed: u64,
}

/// Tuning budget. Start from [`awa_bo_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AwaBoConfig {
    pub budget: usize,
    pub initial: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AwaImageMetrics {
    pub mse: f64,
    /// `INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

#[no_mangle]
pub extern "C" fn awa_attack_config_default() -> AwaAttackConfig {
    let d = AttackConfig::default();
    AwaAttackConfig {
        iterations: d.iterations,
        lr: d.lr,
        weighted: d.loss_kind == LossKind::Weighted,
        target_epoch: d.target_epoch,
        init_seed: d.init_seed,
    }
}

#[no_mangle]
pub extern "C" fn awa_bo_config_default() -> AwaBoConfig {
    let d = BoConfig::default();
    AwaBoConfig {
        budget: d.n_bo,
        initial: d.n_init,
        seed: d.seed,
    }
}

impl AwaAttackConfig {
    fn to_core(self) -> AttackConfig {
        AttackConfig {
            iterations: self.iterations,
            lr: self.lr,
            loss_kind: if self.weighted {
                LossKind::Weighted
            } else {
                LossKind::Unweighted
            },
            target_epoch: self.target_epoch,
            init_seed: self.init_seed,
            ..AttackConfig::default()
        }
    }
}

/// Loads a round directory written by `awa simulate`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn awa_round_load(dir: *const c_char, out: *mut *mut AwaRound) -> AwaStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; the caller guarantees NUL termination.
        let dir = unsafe { CStr::from_ptr(dir) }
            .to_str()
            .map_err(|_| invalid("dir is not UTF-8"))?;
        let r = load_round(&PathBuf::from(dir)).map_err(core_err)?;
        let handle = Box::new(AwaRound {
            record: r.record,
            labels: r.labels,
            truth: r.truth,
        });
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// # Safety
/// `round` must come from [`awa_round_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn awa_round_free(round: *mut AwaRound) {
    if !round.is_null() {
        // SAFETY: the caller hands back ownership of a box we created.
        drop(unsafe { Box::from_raw(round) });
    }
}

/// Client dataset size `N`, or 0 for NULL.
///
/// # Safety
/// `round` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn awa_round_dataset_size(round: *const AwaRound) -> usize {
    // SAFETY: NULL or live per the contract.
    unsafe { round.as_ref() }.map_or(0, |r| r.record.dataset_size)
}

/// Number of `f64` values in the ground-truth batch (`N·c·h·w`), or 0 for NULL.
///
/// # Safety
/// `round` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn awa_round_batch_len(round: *const AwaRound) -> usize {
    // SAFETY: NULL or live per the contract.
    unsafe { round.as_ref() }.map_or(0, |r| r.truth.len())
}

/// Writes `(channels, height, width)` of one sample.
///
/// # Safety
/// `round` must be a live handle and `shape` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn awa_round_input_shape(
    round: *const AwaRound,
    shape: *mut usize,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { round.as_ref() }.ok_or_else(|| null("round"))?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let i = r.record.arch.input;
        // SAFETY: the caller provides room for three values.
        unsafe { ptr::copy_nonoverlapping([i.channels, i.height, i.width].as_ptr(), shape, 3) };
        Ok(())
    })
}

/// Copies the ground-truth batch (first-epoch order, `[N, c, h, w]`) into `buf`.
///
/// # Safety
/// `round` must be a live handle and `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn awa_round_ground_truth(
    round: *const AwaRound,
    buf: *mut f64,
    len: usize,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { round.as_ref() }.ok_or_else(|| null("round"))?;
        // SAFETY: forwarded caller contract.
        unsafe { copy_out(r.truth.data(), buf, len) }
    })
}

/// # Safety
/// `buf` must be NULL or hold `len` writable values.
unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (AwaStatus, String)> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err(invalid(format!(
            "buffer holds {len} values, {} are needed",
            src.len()
        )));
    }
    // SAFETY: `buf` has room for at least `src.len()` values.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// # Safety
/// `q` must be NULL or point to 6 readable values.
unsafe fn read_q(q: *const f64) -> Option<WeightVectorQ> {
    if q.is_null() {
        return None;
    }
    let mut v = [0.0; 6];
    // SAFETY: the caller provides six values.
    unsafe { ptr::copy_nonoverlapping(q, v.as_mut_ptr(), 6) };
    Some(WeightVectorQ::from_array(v))
}

fn problem_for(r: &AwaRound, target_epoch: usize) -> Result<AttackProblem, (AwaStatus, String)> {
    AttackProblem::from_round(&r.record, r.labels.clone(), target_epoch).map_err(core_err)
}

/// Runs one attack. `q` points to `(q_cv, q_bn, q_fc, q_en, p_mean, p_var)`
/// and may be NULL for the unweighted loss. A diverged attack still returns
/// a result, with an infinite objective.
///
/// # Safety
/// `round` and `config` must be live, `q` NULL or 6 readable values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_run(
    round: *const AwaRound,
    config: *const AwaAttackConfig,
    q: *const f64,
    out: *mut *mut AwaAttackResult,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { round.as_ref() }.ok_or_else(|| null("round"))?;
        // SAFETY: as above.
        let cfg = unsafe { config.as_ref() }
            .ok_or_else(|| null("config"))?
            .to_core();
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let q = match (unsafe { read_q(q) }, cfg.loss_kind) {
            (Some(q), _) => q.validated(&QBounds::default()).map_err(core_err)?,
            (None, LossKind::Unweighted) => WeightVectorQ::unweighted(),
            (None, LossKind::Weighted) => return Err(invalid("the weighted loss needs q")),
        };
        let problem = problem_for(r, cfg.target_epoch)?;
        let outcome = rec_attack(&q, &problem, &cfg).map_err(core_err)?;
        // SAFETY: checked non-null above.
        unsafe {
            *out = Box::into_raw(Box::new(AwaAttackResult {
                outcome,
                q: q.to_array(),
            }))
        };
        Ok(())
    })
}

/// Tunes `Q` with Bayesian optimization over the default search box and
/// reruns the weighted attack at the best `Q*`, written to `q_star`.
///
/// # Safety
/// `round`, `attack` and `bo` must be live, `q_star` must hold 6 writable values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn awa_tune(
    round: *const AwaRound,
    attack: *const AwaAttackConfig,
    bo: *const AwaBoConfig,
    q_star: *mut f64,
    out: *mut *mut AwaAttackResult,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { round.as_ref() }.ok_or_else(|| null("round"))?;
        // SAFETY: as above.
        let atk = unsafe { attack.as_ref() }
            .ok_or_else(|| null("attack"))?
            .to_core();
        // SAFETY: as above.
        let bo = unsafe { bo.as_ref() }.ok_or_else(|| null("bo"))?;
        if q_star.is_null() {
            return Err(null("q_star"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let bo = BoConfig {
            n_bo: bo.budget,
            n_init: bo.initial,
            seed: bo.seed,
            ..BoConfig::default()
        };
        let problem = problem_for(r, atk.target_epoch)?;
        let result = awa_optimize(&problem, &atk, &bo).map_err(core_err)?;
        let q = result.q_star.to_array();
        // SAFETY: `q_star` holds six values; `out` checked non-null.
        unsafe {
            ptr::copy_nonoverlapping(q.as_ptr(), q_star, 6);
            *out = Box::into_raw(Box::new(AwaAttackResult {
                outcome: result.attack,
                q,
            }));
        }
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_free(result: *mut AwaAttackResult) {
    if !result.is_null() {
        // SAFETY: the caller hands back ownership of a box we created.
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Final objective `f(Q)`; `INFINITY` after divergence or for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_objective(result: *const AwaAttackResult) -> f64 {
    // SAFETY: NULL or live per the contract.
    unsafe { result.as_ref() }.map_or(f64::INFINITY, |r| r.outcome.f_value)
}

/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_diverged(result: *const AwaAttackResult) -> bool {
    // SAFETY: NULL or live per the contract.
    unsafe { result.as_ref() }.is_none_or(|r| r.outcome.diverged)
}

/// Iterations actually run (fewer than requested after divergence).
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_iterations(result: *const AwaAttackResult) -> usize {
    // SAFETY: NULL or live per the contract.
    unsafe { result.as_ref() }.map_or(0, |r| r.outcome.trace.len())
}

/// Copies the reconstructed batch `[N, c, h, w]` into `buf`.
///
/// # Safety
/// `result` must be a live handle and `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_images(
    result: *const AwaAttackResult,
    buf: *mut f64,
    len: usize,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        // SAFETY: forwarded caller contract.
        unsafe { copy_out(r.outcome.dummy.x_hat.data(), buf, len) }
    })
}

/// Copies the `Q` the attack ran with into `q` (6 values).
///
/// # Safety
/// `result` must be a live handle and `q` must hold 6 writable values.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_q(
    result: *const AwaAttackResult,
    q: *mut f64,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        // SAFETY: forwarded caller contract.
        unsafe { copy_out(&r.q, q, 6) }
    })
}

/// Mean metrics of the reconstruction against the round's ground truth,
/// after the best one-to-one matching of images.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn awa_attack_result_matched_metrics(
    round: *const AwaRound,
    result: *const AwaAttackResult,
    out: *mut AwaImageMetrics,
) -> AwaStatus {
    guard(|| {
        // SAFETY: NULL or live per the contract.
        let r = unsafe { round.as_ref() }.ok_or_else(|| null("round"))?;
        // SAFETY: as above.
        let res = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = match_batches(
            &split_batch(&r.truth),
            &split_batch(&res.outcome.dummy.x_hat),
        )
        .map_err(core_err)?;
        // SAFETY: checked non-null above.
        unsafe {
            *out = AwaImageMetrics {
                mse: m.mean.mse,
                psnr: m.mean.psnr,
                ssim: m.mean.ssim,
            }
        };
        Ok(())
    })
}

/// MSE, PSNR and SSIM of one `[channels, height, width]` image pair.
/// The reconstruction is clamped to `[0, 1]` first.
///
/// # Safety
/// `truth` and `recon` must each hold `channels·height·width` readable values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn awa_image_metrics(
    truth: *const f64,
    recon: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut AwaImageMetrics,
) -> AwaStatus {
    guard(|| {
        if truth.is_null() || recon.is_null() || out.is_null() {
            return Err(null("an argument"));
        }
        let n = channels * height * width;
        if n == 0 {
            return Err(invalid("empty image"));
        }
        let shape = vec![channels, height, width];
        // SAFETY: the caller provides `n` readable values behind each pointer.
        let (t, r) = unsafe {
            (
                std::slice::from_raw_parts(truth, n),
                std::slice::from_raw_parts(recon, n),
            )
        };
        let t = Array::new(shape.clone(), t.to_vec()).map_err(|e| core_err(e.into()))?;
        let r = Array::new(shape, r.to_vec()).map_err(|e| core_err(e.into()))?;
        let m = image_metrics(&ImagePair::new(&t, &r).map_err(core_err)?).map_err(core_err)?;
        // SAFETY: checked non-null above.
        unsafe {
            *out = AwaImageMetrics {
                mse: m.mse,
                psnr: m.psnr,
                ssim: m.ssim,
            }
        };
        Ok(())
    })
}

/// Expected improvement below `f_min` of a Gaussian with mean `mu` and variance `sigma2`.
#[no_mangle]
pub extern "C" fn awa_expected_improvement(mu: f64, sigma2: f64, f_min: f64) -> f64 {
    expected_improvement(mu, sigma2, f_min)
}
