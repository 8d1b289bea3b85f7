//! C ABI for the copback backtesting engine.
//!
//! The surface is deliberately small: filter returns into innovations, open
//! a calibration store, and run the in- or out-of-sample backtest of an
//! innovation pair, receiving the full report as a JSON string. Handles are
//! opaque pointers, every call returns a status code, and the last error
//! message is kept per thread for retrieval with [`copback_last_error`].
//!
//! Memory rules: strings returned through `*mut *mut c_char` are owned by
//! the caller and must be released with [`copback_string_free`]; stores must
//! be released with [`copback_store_free`]; everything else is caller-owned
//! memory that is only read or written inside the call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use copback::calibration::CalibrationStore;
use copback::copula::StudentCopulaParams;
use copback::error::Error;
use copback::market_data::{synchronize_pair, synthetic_dates};
use copback::pipelines::{
    insample_backtest, outofsample_backtest, prepare_insample_tables,
    prepare_outofsample_tables, AnalysisOptions, Orientation, MIN_OUT_TAIL,
};
use copback::market_data::{DatedSeries, ReturnSeries};
use copback::transforms::{KernelShape, KernelSpec};
use copback::volatility::{innovations_from_returns, InnovationSeries, LmArchParams};

/// Status of a call. Nonzero means failure; the message behind
/// [`copback_last_error`] describes it.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopbackStatus {
    /// Success.
    Ok = 0,
    /// Invalid configuration or parameters.
    Config = 2,
    /// Invalid or insufficient data.
    Data = 3,
    /// A computation failed to converge or produced non-finite values.
    Computation = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A string argument was not valid UTF-8.
    Utf8 = 6,
    /// A panic was caught at the boundary; this is a bug worth reporting.
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(e: &Error) -> CopbackStatus {
    set_last_error(&e.to_string());
    match e.exit_code() {
        2 => CopbackStatus::Config,
        4 => CopbackStatus::Computation,
        _ => CopbackStatus::Data,
    }
}

fn guard(f: impl FnOnce() -> CopbackStatus) -> CopbackStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("panic caught at the C boundary");
            CopbackStatus::Panic
        }
    }
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing copback call on the same
/// thread; copy it if you need it longer.
#[no_mangle]
pub extern "C" fn copback_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Version of the library as a static null-terminated string.
#[no_mangle]
pub extern "C" fn copback_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is accepted and ignored.
///
/// # Safety
/// `s` must be a pointer previously returned through a `*mut *mut c_char`
/// out-parameter of this library, or null. Freeing anything else, or
/// freeing twice, is undefined behavior.
#[no_mangle]
pub unsafe extern "C" fn copback_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parameters of the LM-ARCH volatility filter.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CopbackLmArchParams {
    /// Shortest characteristic time, in days.
    pub tau_min: f64,
    /// The ladder stops at the first characteristic time >= tau_max.
    pub tau_max: f64,
    /// Ratio between consecutive characteristic times.
    pub geometric_factor: f64,
    /// Horizon of the logarithmic component-weight decay, in days.
    pub logarithmic_decay_horizon: f64,
    /// Leading returns consumed before the first emitted forecast.
    pub burn_in: usize,
}

impl From<CopbackLmArchParams> for LmArchParams {
    fn from(p: CopbackLmArchParams) -> LmArchParams {
        LmArchParams {
            tau_min: p.tau_min,
            tau_max: p.tau_max,
            geometric_factor: p.geometric_factor,
            logarithmic_decay_horizon: p.logarithmic_decay_horizon,
            burn_in: p.burn_in,
        }
    }
}

/// The default LM-ARCH parameters.
#[no_mangle]
pub extern "C" fn copback_lmarch_default() -> CopbackLmArchParams {
    let d = LmArchParams::default();
    CopbackLmArchParams {
        tau_min: d.tau_min,
        tau_max: d.tau_max,
        geometric_factor: d.geometric_factor,
        logarithmic_decay_horizon: d.logarithmic_decay_horizon,
        burn_in: d.burn_in,
    }
}

/// Number of innovations produced from `n_returns` returns, i.e.
/// `n_returns - burn_in`, or 0 if the series is too short.
#[no_mangle]
pub extern "C" fn copback_innovations_len(n_returns: usize, burn_in: usize) -> usize {
    n_returns.saturating_sub(burn_in)
}

/// Filter a daily log-return series into volatility forecasts and
/// innovations. `returns[0]` is the earliest observation. The outputs start
/// at the first post-burn-in day: `sigma_out[i]` and `epsilon_out[i]`
/// describe `returns[params.burn_in + i]`, and both buffers must hold
/// exactly `copback_innovations_len(n_returns, params.burn_in)` values.
///
/// # Safety
/// `returns` must point to `n_returns` readable doubles; `sigma_out` and
/// `epsilon_out` must point to `out_len` writable doubles; `params` must
/// point to a readable parameter struct.
#[no_mangle]
pub unsafe extern "C" fn copback_innovations(
    returns: *const f64,
    n_returns: usize,
    params: *const CopbackLmArchParams,
    sigma_out: *mut f64,
    epsilon_out: *mut f64,
    out_len: usize,
) -> CopbackStatus {
    guard(|| {
        if returns.is_null() || params.is_null() || sigma_out.is_null() || epsilon_out.is_null() {
            set_last_error("null pointer argument");
            return CopbackStatus::NullPointer;
        }
        let params = LmArchParams::from(*params);
        let expected = copback_innovations_len(n_returns, params.burn_in);
        if out_len != expected {
            set_last_error(&format!(
                "output buffers hold {out_len} values but {n_returns} returns produce {expected}"
            ));
            return CopbackStatus::Data;
        }
        let values = std::slice::from_raw_parts(returns, n_returns);
        let series = match returns_series("asset", values) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match innovations_from_returns(&series, &params) {
            Ok((vol, eps)) => {
                let sigma = std::slice::from_raw_parts_mut(sigma_out, out_len);
                let epsilon = std::slice::from_raw_parts_mut(epsilon_out, out_len);
                sigma.copy_from_slice(&vol.values());
                epsilon.copy_from_slice(&eps.values());
                CopbackStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

fn returns_series(id: &str, values: &[f64]) -> Result<ReturnSeries, Error> {
    let dates = synthetic_dates(values.len());
    ReturnSeries::new(id, dates.into_iter().zip(values.iter().copied()).collect())
}

fn innovation_series(id: &str, values: &[f64]) -> Result<InnovationSeries, Error> {
    let dates = synthetic_dates(values.len());
    InnovationSeries::new(id, dates.into_iter().zip(values.iter().copied()).collect())
}

/// Opaque handle to a directory of persisted calibration tables.
pub struct CopbackStore {
    inner: CalibrationStore,
}

/// Open (or designate) a calibration-table store rooted at `dir`. The
/// directory is created on first write. Returns null if `dir` is null or
/// not UTF-8.
///
/// # Safety
/// `dir` must be a readable null-terminated string.
#[no_mangle]
pub unsafe extern "C" fn copback_store_open(dir: *const c_char) -> *mut CopbackStore {
    if dir.is_null() {
        set_last_error("null store directory");
        return std::ptr::null_mut();
    }
    match CStr::from_ptr(dir).to_str() {
        Ok(path) => Box::into_raw(Box::new(CopbackStore {
            inner: CalibrationStore::new(PathBuf::from(path)),
        })),
        Err(_) => {
            set_last_error("store directory is not valid UTF-8");
            std::ptr::null_mut()
        }
    }
}

/// Release a store handle. Null is accepted and ignored.
///
/// # Safety
/// `store` must come from [`copback_store_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn copback_store_free(store: *mut CopbackStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Kernel of the empirical Rosenblatt transform.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopbackKernelShape {
    Gaussian = 0,
    Rectangular = 1,
}

/// Which asset the Rosenblatt transform conditions on.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopbackOrientation {
    ConditionOnFirst = 0,
    ConditionOnSecond = 1,
}

/// Backtest options; get the defaults from [`copback_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CopbackAnalysisOptions {
    /// Tiles per axis of the tile test.
    pub tiles_per_axis: usize,
    /// Trailing window length of the out-of-sample transform.
    pub window: usize,
    pub kernel_shape: CopbackKernelShape,
    /// Half width of the kernel, in probtile units.
    pub kernel_half_width: f64,
    pub orientation: CopbackOrientation,
    /// Null replications per in-sample calibration table.
    pub nsim_insample: usize,
    /// Null replications per out-of-sample calibration table.
    pub nsim_outofsample: usize,
    /// Copula of the reference out-of-sample null.
    pub reference_rho: f64,
    pub reference_nu: f64,
}

/// The default backtest options.
#[no_mangle]
pub extern "C" fn copback_options_default() -> CopbackAnalysisOptions {
    let d = AnalysisOptions::default();
    CopbackAnalysisOptions {
        tiles_per_axis: d.tiles_per_axis,
        window: d.window,
        kernel_shape: match d.kernel.shape {
            KernelShape::Gaussian => CopbackKernelShape::Gaussian,
            KernelShape::Rectangular => CopbackKernelShape::Rectangular,
        },
        kernel_half_width: d.kernel.half_width,
        orientation: CopbackOrientation::ConditionOnFirst,
        nsim_insample: d.nsim_insample,
        nsim_outofsample: d.nsim_outofsample,
        reference_rho: d.reference_null.rho,
        reference_nu: d.reference_null.nu,
    }
}

fn analysis_options(c: &CopbackAnalysisOptions) -> Result<AnalysisOptions, Error> {
    let options = AnalysisOptions {
        tiles_per_axis: c.tiles_per_axis,
        window: c.window,
        kernel: KernelSpec {
            shape: match c.kernel_shape {
                CopbackKernelShape::Gaussian => KernelShape::Gaussian,
                CopbackKernelShape::Rectangular => KernelShape::Rectangular,
            },
            half_width: c.kernel_half_width,
        },
        orientation: match c.orientation {
            CopbackOrientation::ConditionOnFirst => Orientation::ConditionOnFirst,
            CopbackOrientation::ConditionOnSecond => Orientation::ConditionOnSecond,
        },
        nsim_insample: c.nsim_insample,
        nsim_outofsample: c.nsim_outofsample,
        reference_null: StudentCopulaParams::new(c.reference_rho, c.reference_nu)?,
        table_lengths: Vec::new(),
    };
    options.validate()?;
    Ok(options)
}

/// Headline numbers of one backtest.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CopbackBacktestSummary {
    /// Fitted copula correlation.
    pub rho: f64,
    /// Fitted copula degrees of freedom.
    pub nu: f64,
    pub tile_statistic: f64,
    /// Monte-Carlo p-value of the tile statistic.
    pub tile_p: f64,
    pub gr_statistic: f64,
    /// Monte-Carlo p-value of the GR statistic; NaN out of sample, where the
    /// GR statistic is reported uncalibrated.
    pub gr_p: f64,
}

#[allow(clippy::too_many_arguments)]
unsafe fn backtest_json(
    store: *const CopbackStore,
    eps1: *const f64,
    eps2: *const f64,
    n: usize,
    seed: u64,
    options: *const CopbackAnalysisOptions,
    summary_out: *mut CopbackBacktestSummary,
    json_out: *mut *mut c_char,
    out_of_sample: bool,
) -> CopbackStatus {
    if store.is_null() || eps1.is_null() || eps2.is_null() || options.is_null() {
        set_last_error("null pointer argument");
        return CopbackStatus::NullPointer;
    }
    if !json_out.is_null() {
        *json_out = std::ptr::null_mut();
    }
    let options = match analysis_options(&*options) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    let (v1, v2) = (std::slice::from_raw_parts(eps1, n), std::slice::from_raw_parts(eps2, n));
    let pair = match innovation_series("asset-1", v1)
        .and_then(|a| Ok((a, innovation_series("asset-2", v2)?)))
        .and_then(|(a, b)| synchronize_pair(&a, &b))
    {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let store = &(*store).inner;
    let report = if out_of_sample {
        if n < options.window + MIN_OUT_TAIL {
            return fail(&Error::Data(format!(
                "out-of-sample backtest needs at least window + {MIN_OUT_TAIL} = {} points, \
                 got {n}",
                options.window + MIN_OUT_TAIL
            )));
        }
        prepare_outofsample_tables(store, n - options.window, &options, seed)
            .and_then(|tables| outofsample_backtest(&pair, &options, &tables, seed))
    } else {
        prepare_insample_tables(store, n, &options, seed)
            .and_then(|tables| insample_backtest(&pair, &options, &tables, seed))
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if !summary_out.is_null() {
        *summary_out = CopbackBacktestSummary {
            rho: report.copula_fit.params.rho,
            nu: report.copula_fit.params.nu,
            tile_statistic: report.tile.statistic,
            tile_p: report.tile.p_value.unwrap_or(f64::NAN),
            gr_statistic: report.gr.statistic,
            gr_p: report.gr.p_value.unwrap_or(f64::NAN),
        };
    }
    if !json_out.is_null() {
        match serde_json::to_string(&report) {
            Ok(json) => match CString::new(json) {
                Ok(c) => *json_out = c.into_raw(),
                Err(_) => {
                    set_last_error("report JSON held an interior NUL");
                    return CopbackStatus::Computation;
                }
            },
            Err(e) => {
                set_last_error(&format!("serialize report: {e}"));
                return CopbackStatus::Computation;
            }
        }
    }
    CopbackStatus::Ok
}

/// In-sample backtest of an innovation pair observed on the same days.
/// Missing calibration tables are built and persisted in the store first,
/// which can take minutes; pre-populate the store to avoid that. On success
/// `summary_out` (if non-null) receives the headline numbers and `json_out`
/// (if non-null) the full report, to be freed with [`copback_string_free`].
///
/// # Safety
/// `eps1` and `eps2` must point to `n` readable doubles each; `options`
/// must be readable; `summary_out` and `json_out`, when non-null, must be
/// writable; `store` must be a live handle from [`copback_store_open`].
#[no_mangle]
pub unsafe extern "C" fn copback_insample_json(
    store: *const CopbackStore,
    eps1: *const f64,
    eps2: *const f64,
    n: usize,
    seed: u64,
    options: *const CopbackAnalysisOptions,
    summary_out: *mut CopbackBacktestSummary,
    json_out: *mut *mut c_char,
) -> CopbackStatus {
    guard(|| unsafe {
        backtest_json(store, eps1, eps2, n, seed, options, summary_out, json_out, false)
    })
}

/// Out-of-sample (rolling forecast) backtest of an innovation pair observed
/// on the same days. Same contract as [`copback_insample_json`]; in the
/// summary, `gr_p` is NaN because the out-of-sample GR statistic is
/// reported uncalibrated.
///
/// # Safety
/// See [`copback_insample_json`].
#[no_mangle]
pub unsafe extern "C" fn copback_outsample_json(
    store: *const CopbackStore,
    eps1: *const f64,
    eps2: *const f64,
    n: usize,
    seed: u64,
    options: *const CopbackAnalysisOptions,
    summary_out: *mut CopbackBacktestSummary,
    json_out: *mut *mut c_char,
) -> CopbackStatus {
    guard(|| unsafe {
        backtest_json(store, eps1, eps2, n, seed, options, summary_out, json_out, true)
    })
}
