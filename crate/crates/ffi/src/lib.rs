//! C ABI for the `affr` simulator.
//!
//! Every fallible function returns an [`AffrStatus`]; on failure a message is
//! available from [`affr_last_error`] on the same thread until the next call
//! that fails. Objects are opaque handles released with their `_free`
//! function. Panics never cross the boundary; they surface as
//! [`AffrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use affr::scenario::{self, ScenarioConfig};
use affr::secure_agg::{self, MaskSession, MaskedUpdate};
use affr::{privacy, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    RuntimeError = 4,
    ProtocolAbort = 5,
    Panic = 6,
}

/// Parsed scenario configuration.
pub struct AffrConfig(ScenarioConfig);

/// Secure-aggregation session for one round.
pub struct AffrMaskSession(MaskSession);

/// Aggregate results of a multi-seed run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AffrRunSummary {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_dropout_rate: f64,
    pub mean_participants: f64,
    /// Infinite when the scenario adds no noise.
    pub epsilon_spent: f64,
    pub num_seeds: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> AffrStatus {
    match err {
        Error::ProtocolAbort(_) => AffrStatus::ProtocolAbort,
        Error::Round { source, .. } => status_of(source),
        e if e.is_config() => AffrStatus::ConfigError,
        _ => AffrStatus::RuntimeError,
    }
}

struct Fail(AffrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AffrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AffrStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AffrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AffrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AffrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn affr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn affr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses TOML config text with `n_overrides` `key=value` overrides.
///
/// # Safety
/// `toml` must be a NUL-terminated string, `overrides` an array of
/// `n_overrides` such strings (may be NULL when zero), `out` writable.
#[no_mangle]
pub unsafe extern "C" fn affr_config_parse(
    toml: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut AffrConfig,
) -> AffrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let src = text(toml, "toml")?;
        let items = input(overrides, n_overrides, "overrides")?
            .iter()
            .map(|&p| text(p, "override").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = scenario::parse_config_str(src, &items)?;
        *out = Box::into_raw(Box::new(AffrConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`affr_config_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn affr_config_free(config: *mut AffrConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Writes the 16-hex-digit config hash plus NUL into `buf` (at least 17 bytes).
///
/// # Safety
/// `config` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn affr_config_hash(config: *const AffrConfig, buf: *mut c_char, len: usize) -> AffrStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let hash = cfg.0.hash();
        if len < hash.len() + 1 {
            return Err(invalid(format!("buffer of {len} bytes, need {}", hash.len() + 1)));
        }
        let dst = output(buf, len, "buf")?;
        for (d, b) in dst.iter_mut().zip(hash.bytes()) {
            *d = b as c_char;
        }
        dst[hash.len()] = 0;
        Ok(())
    })
}

/// Runs the configured scenario over all seeds, writes its CSVs to `out_dir`
/// and fills `summary`.
///
/// # Safety
/// `config` must be a live handle, `out_dir` a NUL-terminated path,
/// `summary` writable.
#[no_mangle]
pub unsafe extern "C" fn affr_run(
    config: *const AffrConfig,
    out_dir: *const c_char,
    summary: *mut AffrRunSummary,
) -> AffrStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let dir = text(out_dir, "out_dir")?;
        let out = out_ref(summary, "summary")?;
        let s = scenario::run_scenario(&cfg.0, Path::new(dir))?.summary;
        *out = AffrRunSummary {
            mean_accuracy: s.mean_accuracy,
            std_accuracy: s.std_accuracy,
            mean_dropout_rate: s.mean_dropout_rate,
            mean_participants: s.mean_participants,
            epsilon_spent: s.epsilon_spent,
            num_seeds: s.seeds.len(),
        };
        Ok(())
    })
}

/// Runs all four scenarios for each configured model and writes the
/// comparison CSVs to `out_dir`.
///
/// # Safety
/// `config` must be a live handle and `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn affr_compare(config: *const AffrConfig, out_dir: *const c_char) -> AffrStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let dir = text(out_dir, "out_dir")?;
        scenario::compare_scenarios(&cfg.0, Path::new(dir))?;
        Ok(())
    })
}

/// (ε, δ) spend of `rounds` Gaussian mechanisms with noise `sigma` and
/// sensitivity `clip_norm`.
///
/// # Safety
/// `epsilon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affr_rdp_epsilon(
    sigma: f64,
    rounds: usize,
    delta: f64,
    clip_norm: f64,
    epsilon: *mut f64,
) -> AffrStatus {
    guard(|| {
        let out = out_ref(epsilon, "epsilon")?;
        *out = privacy::rdp_epsilon(sigma, rounds, delta, clip_norm).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Smallest noise level whose spend after `rounds` stays within `target_epsilon`.
///
/// # Safety
/// `sigma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affr_sigma_for_budget(
    target_epsilon: f64,
    delta: f64,
    rounds: usize,
    clip_norm: f64,
    sigma: *mut f64,
) -> AffrStatus {
    guard(|| {
        let out = out_ref(sigma, "sigma")?;
        *out = privacy::sigma_for_budget(target_epsilon, delta, rounds, clip_norm).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Opens a masking session over `n` distinct participant ids.
///
/// # Safety
/// `participants` must hold `n` ids and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn affr_mask_session_new(
    master_seed: u64,
    round: u64,
    attempt: u64,
    participants: *const u64,
    n: usize,
    fraction_bits: u32,
    out: *mut *mut AffrMaskSession,
) -> AffrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let ids: Vec<usize> = input(participants, n, "participants")?.iter().map(|&i| i as usize).collect();
        let session =
            MaskSession::new(master_seed, round, attempt, &ids, fraction_bits).map_err(|e| invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(AffrMaskSession(session)));
        Ok(())
    })
}

/// # Safety
/// `session` must come from [`affr_mask_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn affr_mask_session_free(session: *mut AffrMaskSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Quantizes and masks one client's `len` values into `words`.
///
/// # Safety
/// `session` must be live, `values` readable and `words` writable for `len`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn affr_mask(
    session: *const AffrMaskSession,
    client_id: u64,
    values: *const f64,
    len: usize,
    words: *mut u64,
) -> AffrStatus {
    guard(|| {
        let s = &session.as_ref().ok_or_else(|| null("session"))?.0;
        let q = secure_agg::quantize_values(input(values, len, "values")?, s.fraction_bits)
            .map_err(|e| invalid(e.to_string()))?;
        let masked = secure_agg::mask(&q, client_id as usize, s).map_err(|e| invalid(e.to_string()))?;
        output(words, len, "words")?.copy_from_slice(&masked.words);
        Ok(())
    })
}

/// Sums `n` masked vectors of `len` words (row-major in `words`, one row per
/// entry of `client_ids`) and writes their mean to `mean`. Returns
/// [`AffrStatus::ProtocolAbort`] unless exactly the session's participants
/// contributed.
///
/// # Safety
/// `session` must be live; `client_ids` readable for `n`, `words` for
/// `n * len`, and `mean` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn affr_aggregate(
    session: *const AffrMaskSession,
    client_ids: *const u64,
    words: *const u64,
    n: usize,
    len: usize,
    mean: *mut f64,
) -> AffrStatus {
    guard(|| {
        let s = &session.as_ref().ok_or_else(|| null("session"))?.0;
        if n == 0 {
            return Err(invalid("no masked vectors"));
        }
        let total = n.checked_mul(len).ok_or_else(|| invalid("n * len overflows"))?;
        let ids = input(client_ids, n, "client_ids")?;
        let all = input(words, total, "words")?;
        let masked: Vec<MaskedUpdate> = ids
            .iter()
            .enumerate()
            .map(|(k, &id)| MaskedUpdate {
                round: s.round,
                client_id: id as usize,
                fraction_bits: s.fraction_bits,
                words: all[k * len..(k + 1) * len].to_vec(),
            })
            .collect();
        let sum = secure_agg::aggregate_masked(&masked, s)?;
        output(mean, len, "mean")?.copy_from_slice(&secure_agg::decode_words(&sum.values, sum.fraction_bits, n));
        Ok(())
    })
}
