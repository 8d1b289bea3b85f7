//! End-to-end backtests of bivariate dependence forecasts: marginal and
//! copula fitting, Rosenblatt transforms, and calibrated uniformity tests
//! over one synchronized pair of innovation series, plus cross-sectional
//! studies and scenario risk measures in the submodules.

mod cross_section;
mod scenarios;

pub use cross_section::{
    cross_section, order_assets, ordering_objective, CrossSectionReport, OrderingReport,
    PairFailure, PairFlags,
};
pub use scenarios::{generate_scenarios, risk_measures, RiskMeasures, ScenarioSet};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    p_value, shift_scale_p_value, CalibrationKey, CalibrationStore, CalibrationTable, NullModel,
    Setting, ShiftScaleMap, StatisticKind, MIN_NSIM,
};
use crate::copula::{
    fit_student_copula, kendall_tau_inversion, CopulaSample, Provenance, StudentCopulaParams,
};
use crate::dist::{
    dependence_measures, fit_student_marginal, kendall_tau, pseudo_observations, student_cdf,
    DependenceMeasures, StudentMarginalFit,
};
use crate::error::{Error, Result};
use crate::market_data::SyncedPair;
use crate::rng::derive_rng;
use crate::stat_tests::{
    cvm_uniformity, gr_statistic, ks_uniformity, tile_statistic, PValueProvenance, TestResult,
};
use crate::transforms::{nudge_interior, rolling_out_of_sample, rosenblatt_analytic, KernelSpec};

/// Fewest synchronized points an in-sample backtest accepts.
pub const MIN_INSAMPLE_LEN: usize = 1000;
/// Fewest points an out-of-sample backtest keeps past the rolling window.
pub const MIN_OUT_TAIL: usize = 500;

/// Which asset the Rosenblatt transform conditions on. The transform maps
/// (z1, z2) to (z1, P(z2 | z1)); conditioning on the second asset swaps the
/// pair before any other step, so reports always describe the order
/// actually analyzed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    ConditionOnFirst,
    ConditionOnSecond,
}

/// Settings shared by every backtest run. A report embeds the options it
/// ran under next to the seed; together with the input series these
/// reproduce the run bit for bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Tiles per axis of the tile test.
    pub tiles_per_axis: usize,
    /// Trailing window length of the out-of-sample transform.
    pub window: usize,
    /// Kernel of the empirical Rosenblatt transform.
    pub kernel: KernelSpec,
    /// Conditioning order of the analytic Rosenblatt transform.
    pub orientation: Orientation,
    /// Null replications per in-sample calibration table.
    pub nsim_insample: usize,
    /// Null replications per out-of-sample calibration table.
    pub nsim_outofsample: usize,
    /// Copula of the reference out-of-sample null; the tile statistic's
    /// null distribution is nearly invariant in it.
    pub reference_null: StudentCopulaParams,
    /// Sample lengths to calibrate at; empty means the exact length of the
    /// data at hand. Cross-sections bracket with their smallest and largest
    /// pair lengths and interpolate in between.
    pub table_lengths: Vec<usize>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            tiles_per_axis: 10,
            window: 500,
            kernel: KernelSpec::default(),
            orientation: Orientation::ConditionOnFirst,
            nsim_insample: crate::calibration::DEFAULT_NSIM_INSAMPLE,
            nsim_outofsample: crate::calibration::DEFAULT_NSIM_OUTOFSAMPLE,
            reference_null: StudentCopulaParams { rho: 0.4, nu: 6.0 },
            table_lengths: Vec::new(),
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_per_axis < 2 {
            return Err(Error::Config(format!(
                "tiles per axis must be at least 2, got {}",
                self.tiles_per_axis
            )));
        }
        if self.window < 2 {
            return Err(Error::Config(format!(
                "the rolling window must hold at least 2 points, got {}",
                self.window
            )));
        }
        self.kernel.validate()?;
        if self.nsim_insample < MIN_NSIM || self.nsim_outofsample < MIN_NSIM {
            return Err(Error::Config(format!(
                "calibration needs at least {MIN_NSIM} replications, got {} in-sample \
                 and {} out-of-sample",
                self.nsim_insample, self.nsim_outofsample
            )));
        }
        StudentCopulaParams::new(self.reference_null.rho, self.reference_null.nu)?;
        Ok(())
    }
}

/// Marginal diagnostics for one asset of the pair.
#[derive(Clone, Debug, Serialize)]
pub struct MarginalReport {
    pub asset_id: String,
    /// Maximum-likelihood Student fit of the innovations; absent when the
    /// optimizer failed (the failure is recorded and flagged).
    pub fit: Option<StudentMarginalFit>,
    pub fit_error: Option<String>,
    /// Uniformity of the marginal probability integral transform: the
    /// innovations under the fitted marginal in-sample, the accumulated
    /// forecast probtiles out-of-sample (diagnostic only there, since the
    /// overlapping windows bias the asymptotic p-values).
    pub ks: Option<TestResult>,
    pub cvm: Option<TestResult>,
    /// Folded empirical cdf of the innovations, for log-scale tail plots.
    pub folded_cdf: Vec<(f64, f64)>,
}

/// Copula fit outcome. When the optimizer fails (or the dependence is
/// numerically degenerate) the recorded parameters fall back to Kendall-tau
/// inversion with 6 degrees of freedom and `fallback` is set.
#[derive(Clone, Debug, Serialize)]
pub struct CopulaFitReport {
    pub params: StudentCopulaParams,
    pub log_likelihood: Option<f64>,
    pub rho_init: f64,
    pub evaluations: usize,
    pub normal_like: bool,
    pub fallback: bool,
    pub error: Option<String>,
}

/// Full record of one pair backtest.
#[derive(Clone, Debug, Serialize)]
pub struct BacktestReport {
    /// Asset identifiers in the order actually analyzed (after applying the
    /// orientation).
    pub asset_ids: (String, String),
    pub setting: Setting,
    /// Synchronized innovation count.
    pub n: usize,
    /// Out-of-sample evaluation count, n minus the window.
    pub n_out: Option<usize>,
    pub orientation: Orientation,
    pub marginals: Vec<MarginalReport>,
    pub dependence: DependenceMeasures,
    /// Copula fitted to the in-sample pseudo-observations.
    pub copula_fit: CopulaFitReport,
    /// Copula fitted to the out-of-sample probtile stream.
    pub out_copula_fit: Option<CopulaFitReport>,
    /// Tile test of the setting's transformed copula: calibrated against
    /// the in-sample null directly in-sample, through the shift-and-scale
    /// correction out-of-sample.
    pub tile: TestResult,
    /// GR test: calibrated in-sample, statistic-only out-of-sample (its
    /// out-of-sample null depends materially on the data copula).
    pub gr: TestResult,
    /// Shift-and-scale maps behind the out-of-sample tile p-value, aligned
    /// with the provenance weights.
    pub shift_scale: Option<Vec<ShiftScaleMap>>,
    /// Unit-square samples: in-copula and in-trf-copula, plus out-copula
    /// and out-trf-copula for out-of-sample runs.
    pub samples: Vec<CopulaSample>,
    /// Raw (un-nudged) out-trf points as plot data; the tested sample above
    /// carries the nudged interior version.
    pub out_trf_raw: Option<Vec<(f64, f64)>>,
    pub flags: Vec<String>,
    pub seed: u64,
    pub options: AnalysisOptions,
}

/// In-sample calibration tables for both statistics, one entry per
/// calibrated length. Tile and GR tables of one length share their
/// simulated replications.
#[derive(Clone, Debug)]
pub struct InsampleTables {
    pub tile: Vec<CalibrationTable>,
    pub gr: Vec<CalibrationTable>,
}

/// Out-of-sample table pairs, one (out tile table at the reference null,
/// in tile table) entry per calibrated out-length.
#[derive(Clone, Debug)]
pub struct OutsampleTables {
    pub pairs: Vec<(CalibrationTable, CalibrationTable)>,
}

/// Calibration key of the in-sample null at one length.
pub fn insample_key(
    kind: StatisticKind,
    sample_len: usize,
    options: &AnalysisOptions,
    seed: u64,
) -> CalibrationKey {
    CalibrationKey {
        kind,
        setting: Setting::InSample,
        sample_len,
        null: NullModel::Independence,
        window: None,
        kernel: None,
        tiles_per_axis: (kind == StatisticKind::Tile).then_some(options.tiles_per_axis),
        n_sim: options.nsim_insample,
        seed,
    }
}

/// Calibration key of the out-of-sample tile null (reference copula pushed
/// through the rolling transform) at one out-length.
pub fn outofsample_key(sample_len: usize, options: &AnalysisOptions, seed: u64) -> CalibrationKey {
    CalibrationKey {
        kind: StatisticKind::Tile,
        setting: Setting::OutOfSample,
        sample_len,
        null: NullModel::student(options.reference_null),
        window: Some(options.window),
        kernel: Some(options.kernel),
        tiles_per_axis: Some(options.tiles_per_axis),
        n_sim: options.nsim_outofsample,
        seed,
    }
}

/// The calibrated lengths used for a data length: the configured bracket if
/// set, else the exact length.
fn resolved_lengths(options: &AnalysisOptions, n: usize) -> Vec<usize> {
    let mut lens = if options.table_lengths.is_empty() {
        vec![n]
    } else {
        options.table_lengths.clone()
    };
    lens.sort_unstable();
    lens.dedup();
    lens
}

/// Load or build the in-sample tables for a data length through the store.
pub fn prepare_insample_tables(
    store: &CalibrationStore,
    n: usize,
    options: &AnalysisOptions,
    seed: u64,
) -> Result<InsampleTables> {
    options.validate()?;
    let mut tile = Vec::new();
    let mut gr = Vec::new();
    for len in resolved_lengths(options, n) {
        let keys = [
            insample_key(StatisticKind::Tile, len, options, seed),
            insample_key(StatisticKind::Gr, len, options, seed),
        ];
        let mut tables = store.get_or_build_shared(&keys)?;
        gr.push(tables.pop().expect("two tables").0);
        tile.push(tables.pop().expect("two tables").0);
    }
    Ok(InsampleTables { tile, gr })
}

/// Load or build the out-of-sample table pairs for an out-length through
/// the store.
pub fn prepare_outofsample_tables(
    store: &CalibrationStore,
    n_out: usize,
    options: &AnalysisOptions,
    seed: u64,
) -> Result<OutsampleTables> {
    options.validate()?;
    let mut pairs = Vec::new();
    for len in resolved_lengths(options, n_out) {
        let (out_t, _) = store.get_or_build(&outofsample_key(len, options, seed))?;
        let (in_t, _) =
            store.get_or_build(&insample_key(StatisticKind::Tile, len, options, seed))?;
        pairs.push((out_t, in_t));
    }
    Ok(OutsampleTables { pairs })
}

fn check_insample_tables(tables: &InsampleTables, options: &AnalysisOptions) -> Result<()> {
    if tables.tile.is_empty() || tables.gr.is_empty() {
        return Err(Error::Config("in-sample backtest needs tile and GR tables".into()));
    }
    for t in &tables.tile {
        let k = t.key();
        if k.kind != StatisticKind::Tile
            || k.setting != Setting::InSample
            || k.tiles_per_axis != Some(options.tiles_per_axis)
        {
            return Err(Error::Config(format!(
                "table {} does not match the run's in-sample tile settings",
                k.label()
            )));
        }
    }
    for t in &tables.gr {
        let k = t.key();
        if k.kind != StatisticKind::Gr || k.setting != Setting::InSample {
            return Err(Error::Config(format!(
                "table {} does not match the run's in-sample GR settings",
                k.label()
            )));
        }
    }
    Ok(())
}

fn check_outofsample_tables(tables: &OutsampleTables, options: &AnalysisOptions) -> Result<()> {
    if tables.pairs.is_empty() {
        return Err(Error::Config("out-of-sample backtest needs calibration table pairs".into()));
    }
    for (out_t, in_t) in &tables.pairs {
        let ko = out_t.key();
        let matches = ko.setting == Setting::OutOfSample
            && ko.window == Some(options.window)
            && ko.kernel == Some(options.kernel)
            && ko.tiles_per_axis == Some(options.tiles_per_axis)
            && ko.null == NullModel::student(options.reference_null);
        if !matches {
            return Err(Error::Config(format!(
                "table {} does not match the run's out-of-sample settings",
                ko.label()
            )));
        }
        let ki = in_t.key();
        if ki.setting != Setting::InSample
            || ki.kind != StatisticKind::Tile
            || ki.tiles_per_axis != Some(options.tiles_per_axis)
        {
            return Err(Error::Config(format!(
                "table {} does not match the run's in-sample tile settings",
                ki.label()
            )));
        }
    }
    Ok(())
}

fn oriented(pair: &SyncedPair, orientation: Orientation) -> SyncedPair {
    match orientation {
        Orientation::ConditionOnFirst => pair.clone(),
        Orientation::ConditionOnSecond => pair.swapped(),
    }
}

/// Marginal fit and folded cdf; the uniformity fields start empty and are
/// filled by the caller with the setting's PIT sample.
fn base_marginal(id: &str, values: &[f64], flags: &mut Vec<String>) -> Result<MarginalReport> {
    let folded = folded_cdf(values)?;
    let (fit, fit_error) = match fit_student_marginal(values) {
        Ok(fit) => (Some(fit), None),
        Err(e) => {
            flags.push(format!("marginal-fit-failed:{id}"));
            (None, Some(e.to_string()))
        }
    };
    Ok(MarginalReport {
        asset_id: id.to_owned(),
        fit,
        fit_error,
        ks: None,
        cvm: None,
        folded_cdf: folded,
    })
}

/// Fit the copula, falling back to Kendall-tau inversion with nu = 6 when
/// the dependence is numerically degenerate or the optimizer fails. The
/// `label` prefixes the flag so in- and out-of-sample fallbacks stay
/// distinguishable.
fn fit_copula_with_fallback(
    sample: &CopulaSample,
    tau: f64,
    label: &str,
    flags: &mut Vec<String>,
) -> CopulaFitReport {
    let fallback_rho =
        if tau.is_finite() { kendall_tau_inversion(tau).clamp(-0.995, 0.995) } else { 0.0 };
    let fallback = |error: String, flags: &mut Vec<String>| {
        flags.push(format!("{label}-fit-fallback"));
        CopulaFitReport {
            params: StudentCopulaParams::new(fallback_rho, 6.0).expect("clamped params are valid"),
            log_likelihood: None,
            rho_init: fallback_rho,
            evaluations: 0,
            normal_like: false,
            fallback: true,
            error: Some(error),
        }
    };
    if !tau.is_finite() || tau.abs() >= 0.999 {
        flags.push("degenerate-dependence".into());
        return fallback(format!("dependence is numerically degenerate (tau = {tau})"), flags);
    }
    match fit_student_copula(sample) {
        Ok(fit) => CopulaFitReport {
            params: fit.params,
            log_likelihood: Some(fit.log_likelihood),
            rho_init: fit.rho_init,
            evaluations: fit.evaluations,
            normal_like: fit.normal_like,
            fallback: false,
            error: None,
        },
        Err(e) => fallback(e.to_string(), flags),
    }
}

/// Pseudo-observations of both columns with seeded tie-breaking, combined
/// into the in-copula sample, plus the fitted copula and its analytic
/// Rosenblatt transform. Shared by both settings.
fn insample_stage(
    pair: &SyncedPair,
    dependence: &DependenceMeasures,
    seed: u64,
    flags: &mut Vec<String>,
) -> Result<(CopulaSample, CopulaFitReport, CopulaSample)> {
    let (id1, id2) = pair.asset_ids();
    let ids = (id1.to_owned(), id2.to_owned());
    let mut rng = derive_rng(seed, &["pipeline", "pseudo-obs", id1, id2]);
    let u1 = pseudo_observations(pair.values_1(), &mut rng);
    let u2 = pseudo_observations(pair.values_2(), &mut rng);
    let in_sample =
        CopulaSample::new(u1.into_iter().zip(u2).collect(), Provenance::InCopula, ids)?;
    let copula_fit = fit_copula_with_fallback(&in_sample, dependence.kendall, "copula", flags);
    let in_trf = rosenblatt_analytic(&in_sample, &copula_fit.params)?;
    Ok((in_sample, copula_fit, in_trf))
}

/// In-sample backtest of one synchronized innovation pair.
///
/// Fits Student marginals and the Student copula, Rosenblatt-transforms the
/// pseudo-observations with the fitted copula, and converts the tile and GR
/// statistics of the transformed sample into p-values against the supplied
/// in-sample tables. Fit failures are recorded in the report and the run
/// continues on fallback parameters.
pub fn insample_backtest(
    pair: &SyncedPair,
    options: &AnalysisOptions,
    tables: &InsampleTables,
    seed: u64,
) -> Result<BacktestReport> {
    options.validate()?;
    check_insample_tables(tables, options)?;
    let pair = oriented(pair, options.orientation);
    let n = pair.len();
    if n < MIN_INSAMPLE_LEN {
        return Err(Error::Data(format!(
            "in-sample backtest needs at least {MIN_INSAMPLE_LEN} synchronized points, got {n}"
        )));
    }
    let (id1, id2) = pair.asset_ids();
    let ids = (id1.to_owned(), id2.to_owned());
    let mut flags = Vec::new();

    let mut marginals = vec![
        base_marginal(id1, pair.values_1(), &mut flags)?,
        base_marginal(id2, pair.values_2(), &mut flags)?,
    ];
    // Marginal adequacy: uniformity of the innovations' PIT under the
    // fitted marginal.
    for (marginal, values) in marginals.iter_mut().zip([pair.values_1(), pair.values_2()]) {
        if let Some(fit) = &marginal.fit {
            let pit: Vec<f64> = values.iter().map(|&x| student_cdf(x, &fit.params)).collect();
            marginal.ks = Some(ks_uniformity(&pit)?);
            marginal.cvm = Some(cvm_uniformity(&pit)?);
        }
    }

    let dependence = dependence_measures(&pair)?;
    let (in_sample, copula_fit, in_trf) = insample_stage(&pair, &dependence, seed, &mut flags)?;

    let tile_refs: Vec<&CalibrationTable> = tables.tile.iter().collect();
    let gr_refs: Vec<&CalibrationTable> = tables.gr.iter().collect();
    let tile = p_value(tile_statistic(in_trf.points(), options.tiles_per_axis), &tile_refs, n)?;
    let gr = p_value(gr_statistic(in_trf.points()), &gr_refs, n)?;

    Ok(BacktestReport {
        asset_ids: ids,
        setting: Setting::InSample,
        n,
        n_out: None,
        orientation: options.orientation,
        marginals,
        dependence,
        copula_fit,
        out_copula_fit: None,
        tile,
        gr,
        shift_scale: None,
        samples: vec![in_sample, in_trf],
        out_trf_raw: None,
        flags,
        seed,
        options: options.clone(),
    })
}

/// Out-of-sample backtest of one synchronized innovation pair.
///
/// Rolls a randomized probtile forecast over the trailing window, applies
/// the kernel-empirical Rosenblatt transform step by step, and converts the
/// tile statistic of the accumulated transformed sample into a p-value
/// through the shift-and-scale correction onto the in-sample null. The GR
/// statistic is reported uncalibrated. The in-sample stage (marginal fits,
/// copula fit, analytic transform) runs on the full series as well, so the
/// report carries all four copula samples.
pub fn outofsample_backtest(
    pair: &SyncedPair,
    options: &AnalysisOptions,
    tables: &OutsampleTables,
    seed: u64,
) -> Result<BacktestReport> {
    options.validate()?;
    check_outofsample_tables(tables, options)?;
    let pair = oriented(pair, options.orientation);
    let n = pair.len();
    let m = options.window;
    if n < m + MIN_OUT_TAIL {
        return Err(Error::Data(format!(
            "out-of-sample backtest needs at least window + {MIN_OUT_TAIL} = {} points, got {n}",
            m + MIN_OUT_TAIL
        )));
    }
    let (id1, id2) = pair.asset_ids();
    let ids = (id1.to_owned(), id2.to_owned());
    let mut flags = Vec::new();

    let mut marginals = vec![
        base_marginal(id1, pair.values_1(), &mut flags)?,
        base_marginal(id2, pair.values_2(), &mut flags)?,
    ];

    let dependence = dependence_measures(&pair)?;
    let (in_sample, copula_fit, in_trf) = insample_stage(&pair, &dependence, seed, &mut flags)?;

    // The rolling transform consumes its own stream; no look-ahead: each
    // step sees only the trailing window.
    let raw: Vec<(f64, f64)> =
        pair.values_1().iter().zip(pair.values_2()).map(|(&a, &b)| (a, b)).collect();
    let mut roll_rng = derive_rng(seed, &["pipeline", "rolling", id1, id2]);
    let rolled = rolling_out_of_sample(&raw, m, &options.kernel, &mut roll_rng)?;
    let n_out = rolled.out_copula.len();

    // Marginal uniformity of the accumulated probtiles (diagnostic only:
    // the overlapping windows bias the asymptotic p-values).
    let z1: Vec<f64> = rolled.out_copula.iter().map(|p| p.0).collect();
    let z2: Vec<f64> = rolled.out_copula.iter().map(|p| p.1).collect();
    for (marginal, z) in marginals.iter_mut().zip([&z1, &z2]) {
        marginal.ks = Some(ks_uniformity(z)?);
        marginal.cvm = Some(cvm_uniformity(z)?);
    }

    let out_sample =
        CopulaSample::new(rolled.out_copula.clone(), Provenance::OutCopula, ids.clone())?;
    let out_copula_fit =
        fit_copula_with_fallback(&out_sample, kendall_tau(&z1, &z2), "out-copula", &mut flags);

    let out_trf_raw = rolled.out_trf;
    let nudged: Vec<(f64, f64)> =
        out_trf_raw.iter().map(|&(u1, u2)| (u1, nudge_interior(u2, m))).collect();
    let out_trf = CopulaSample::new(nudged, Provenance::OutTrfCopula, ids.clone())?;

    let pair_refs: Vec<(&CalibrationTable, &CalibrationTable)> =
        tables.pairs.iter().map(|(o, i)| (o, i)).collect();
    let (tile, maps) =
        shift_scale_p_value(tile_statistic(out_trf.points(), options.tiles_per_axis), &pair_refs, n_out)?;
    let gr = TestResult {
        statistic: gr_statistic(out_trf.points()),
        p_value: None,
        provenance: PValueProvenance::Uncalibrated {
            reason: "the GR statistic's out-of-sample null depends materially on the data \
                     copula, so no calibrated p-value is reported"
                .into(),
        },
    };

    Ok(BacktestReport {
        asset_ids: ids,
        setting: Setting::OutOfSample,
        n,
        n_out: Some(n_out),
        orientation: options.orientation,
        marginals,
        dependence,
        copula_fit,
        out_copula_fit: Some(out_copula_fit),
        tile,
        gr,
        shift_scale: Some(maps),
        samples: vec![in_sample, in_trf, out_sample, out_trf],
        out_trf_raw: Some(out_trf_raw),
        flags,
        seed,
        options: options.clone(),
    })
}

/// Folded empirical cdf for log-scale tail plots: each sorted sample point
/// pairs with min(#{<= x}, #{>= x}) / n, the smaller of the two one-sided
/// tail weights. Counting ties inclusively on both sides keeps the curve
/// symmetric for symmetric samples and strictly positive (so it survives a
/// log axis); at the median of an odd-length sample the fold slightly
/// exceeds one half.
pub fn folded_cdf(sample: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::Data(format!("folded cdf needs at least 2 points, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("folded cdf sample contains non-finite values".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let x = sorted[start];
        let mut end = start + 1;
        while end < n && sorted[end] == x {
            end += 1;
        }
        let below_or_eq = end as f64;
        let at_or_above = (n - start) as f64;
        let folded = below_or_eq.min(at_or_above) / nf;
        out.extend(std::iter::repeat_n((x, folded), end - start));
        start = end;
    }
    Ok(out)
}
