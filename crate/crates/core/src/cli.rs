//! Command-line front end. One TOML run configuration drives every
//! subcommand; flags can override the seed, the output directory, the
//! calibration directory, and the worker count, nothing else. All outputs
//! land under the configured output directory and start with the same
//! metadata block (tool version, config hash, seed, command), so a run can
//! always be traced back to the exact configuration that produced it.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 computation
//! error. Exit 1 is reserved for panics, which are bugs.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::calibration::{CalibrationTable, Setting, StatisticKind};
use crate::config::RunConfig;
use crate::copula::{sample_copula, Provenance};
use crate::dist::{student_quantile, StudentMarginalParams};
use crate::error::{Error, Result};
use crate::market_data::{
    compute_returns, load_prices, synchronize_pair, synthetic_dates, DatedSeries,
};
use crate::pipelines::{
    cross_section, insample_backtest, insample_key, outofsample_backtest, outofsample_key,
    prepare_insample_tables, prepare_outofsample_tables, AnalysisOptions, BacktestReport,
    MIN_INSAMPLE_LEN, MIN_OUT_TAIL,
};
use crate::rng::derive_rng;
use crate::volatility::{innovations_from_returns, InnovationSeries};
use crate::VERSION;

#[derive(Parser)]
#[command(
    name = "copback",
    version = crate::VERSION,
    about = "Backtests uni- and bivariate risk forecasts built from \
             volatility-filtered innovations and Student copulas",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 data error, \
                  4 computation error."
)]
pub struct Cli {
    /// Path of the TOML run configuration.
    #[arg(long, global = true, default_value = "copback.toml")]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Override the calibration table directory (flag, then config file,
    /// then COPBACK_CALIB_DIR, then ./calibration).
    #[arg(long, global = true)]
    pub calibration_dir: Option<PathBuf>,
    /// Worker threads for the parallel sections. Results never depend on
    /// this; it only changes how fast they arrive.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Filter every configured asset into volatility and innovation series.
    Innovations,
    /// Build and persist the calibration tables the configured analyses
    /// will need, reusing any that already exist.
    Calibrate,
    /// In-sample backtest of the configured asset pair.
    Insample,
    /// Out-of-sample (rolling forecast) backtest of the configured pair.
    Outsample,
    /// Backtest every ordered pair of three or more assets and order them
    /// by dependence.
    Crosssection {
        /// Override the configured setting.
        #[arg(long, value_enum)]
        setting: Option<SettingArg>,
    },
    /// Generate a synthetic heteroskedastic price pair with a known copula,
    /// for end-to-end self-tests.
    Simulate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SettingArg {
    InSample,
    OutOfSample,
}

impl SettingArg {
    fn setting(self) -> Setting {
        match self {
            SettingArg::InSample => Setting::InSample,
            SettingArg::OutOfSample => Setting::OutOfSample,
        }
    }
}

/// Parse the command line, run it, and return the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(k) = cli.workers {
        if k == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        // Ignore the error: the global pool can only be set once, which is
        // fine since results do not depend on it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(dir) = &cli.calibration_dir {
        config.calibration_dir = Some(dir.clone());
    }
    match &cli.command {
        Command::Innovations => cmd_innovations(&config),
        Command::Calibrate => cmd_calibrate(&config),
        Command::Insample => cmd_insample(&config),
        Command::Outsample => cmd_outsample(&config),
        Command::Crosssection { setting } => cmd_crosssection(&config, *setting),
        Command::Simulate => cmd_simulate(&config),
    }
}

/// Metadata stamped into every output file.
struct Metadata {
    tool_version: &'static str,
    config_hash: String,
    seed: u64,
    command: &'static str,
}

impl Metadata {
    fn new(config: &RunConfig, command: &'static str) -> Metadata {
        Metadata {
            tool_version: VERSION,
            config_hash: config.config_hash(),
            seed: config.seed,
            command,
        }
    }

    fn comment_block(&self) -> String {
        format!(
            "# tool_version: {}\n# config_hash: {}\n# seed: {}\n# command: {}\n",
            self.tool_version, self.config_hash, self.seed, self.command
        )
    }

    /// JSON document with the metadata fields inlined next to the payload.
    fn json_doc(&self, fields: Vec<(&str, Value)>) -> Value {
        let mut doc = serde_json::Map::new();
        doc.insert("tool_version".into(), json!(self.tool_version));
        doc.insert("config_hash".into(), json!(self.config_hash));
        doc.insert("seed".into(), json!(self.seed));
        doc.insert("command".into(), json!(self.command));
        for (k, v) in fields {
            doc.insert(k.into(), v);
        }
        Value::Object(doc)
    }
}

fn ensure_output_dir(config: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;
    Ok(config.output_dir.clone())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| Error::Computation(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(
    path: &Path,
    meta: &Metadata,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<()> {
    let mut text = meta.comment_block();
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    write_text(path, &text)
}

/// File-name-safe form of an asset id.
fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '-' })
        .collect()
}

/// Quote a CSV field if it holds a separator, quote, or newline.
fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Volatility-filter every configured asset, in config order.
fn asset_innovations(config: &RunConfig) -> Result<Vec<InnovationSeries>> {
    let params = config.lmarch();
    config
        .assets
        .iter()
        .map(|spec| {
            let prices = load_prices(&spec.file, &spec.id)?;
            let returns = compute_returns(&prices)?;
            let (_, eps) = innovations_from_returns(&returns, &params)?;
            Ok(eps)
        })
        .collect()
}

fn require_pair(config: &RunConfig) -> Result<()> {
    config.validate_with_assets(2)?;
    if config.assets.len() != 2 {
        return Err(Error::Config(format!(
            "this command works on exactly 2 assets, {} are configured",
            config.assets.len()
        )));
    }
    Ok(())
}

fn cmd_innovations(config: &RunConfig) -> Result<()> {
    config.validate_with_assets(1)?;
    let out_dir = ensure_output_dir(config)?;
    let meta = Metadata::new(config, "innovations");
    let params = config.lmarch();
    let mut manifest = Vec::new();
    for spec in &config.assets {
        let prices = load_prices(&spec.file, &spec.id)?;
        let returns = compute_returns(&prices)?;
        let (vol, eps) = innovations_from_returns(&returns, &params)?;
        let robs = &returns.observations()[params.burn_in..];
        let (vobs, eobs) = (vol.observations(), eps.observations());
        if robs.len() != vobs.len() || robs.len() != eobs.len() {
            return Err(Error::Computation(format!(
                "{}: burn-in alignment broke: {} returns vs {} sigmas vs {} innovations",
                spec.id,
                robs.len(),
                vobs.len(),
                eobs.len()
            )));
        }
        let name = format!("innovations-{}.csv", sanitize_id(&spec.id));
        let rows = robs
            .iter()
            .zip(vobs)
            .zip(eobs)
            .map(|((r, v), e)| format!("{},{},{},{}", r.0, r.1, v.1, e.1));
        write_csv(&out_dir.join(&name), &meta, "date,return,sigma,epsilon", rows)?;
        manifest.push(json!({
            "id": spec.id,
            "source": spec.file,
            "file": name,
            "rows": eobs.len(),
            "first_date": eobs.first().map(|o| o.0.as_str()),
            "last_date": eobs.last().map(|o| o.0.as_str()),
        }));
        println!("{}: {} innovations", spec.id, eobs.len());
    }
    write_json(
        &out_dir.join("innovations-manifest.json"),
        &meta.json_doc(vec![("assets", json!(manifest))]),
    )
}

/// Sorted, deduplicated {min, max} of a set of lengths.
fn bracketing(lens: &[usize]) -> Vec<usize> {
    match (lens.iter().min(), lens.iter().max()) {
        (Some(&lo), Some(&hi)) if lo != hi => vec![lo, hi],
        (Some(&lo), _) => vec![lo],
        _ => Vec::new(),
    }
}

/// The sample lengths the configured analyses will calibrate at: either the
/// configured table lengths verbatim, or, per setting, the bracketing pair
/// lengths of every usable synchronized pair.
fn calibration_lengths(
    config: &RunConfig,
    options: &AnalysisOptions,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !options.table_lengths.is_empty() {
        return Ok((options.table_lengths.clone(), options.table_lengths.clone()));
    }
    let inn = asset_innovations(config)?;
    let mut ns = Vec::new();
    for i in 0..inn.len() {
        for j in i + 1..inn.len() {
            if let Ok(pair) = synchronize_pair(&inn[i], &inn[j]) {
                ns.push(pair.len());
            }
        }
    }
    let in_ns: Vec<usize> = ns.iter().copied().filter(|&n| n >= MIN_INSAMPLE_LEN).collect();
    let out_ns: Vec<usize> = ns
        .iter()
        .copied()
        .filter(|&n| n >= options.window + MIN_OUT_TAIL)
        .map(|n| n - options.window)
        .collect();
    let (in_lens, out_lens) = (bracketing(&in_ns), bracketing(&out_ns));
    if in_lens.is_empty() && out_lens.is_empty() {
        return Err(Error::Data(format!(
            "no asset pair is long enough to backtest (in-sample needs {MIN_INSAMPLE_LEN} \
             synchronized points, out-of-sample {})",
            options.window + MIN_OUT_TAIL
        )));
    }
    Ok((in_lens, out_lens))
}

fn cmd_calibrate(config: &RunConfig) -> Result<()> {
    config.validate_with_assets(2)?;
    let out_dir = ensure_output_dir(config)?;
    let meta = Metadata::new(config, "calibrate");
    let options = config.analysis_options()?;
    let store = config.store();
    let (in_lens, out_lens) = calibration_lengths(config, &options)?;

    let mut entries = Vec::new();
    let (mut built, mut reused) = (0usize, 0usize);
    let mut record = |table: &CalibrationTable, fresh: bool| {
        if fresh {
            built += 1;
        } else {
            reused += 1;
        }
        let k = table.key();
        entries.push(json!({
            "digest": k.digest(),
            "kind": k.kind.as_str(),
            "setting": k.setting.as_str(),
            "sample_len": k.sample_len,
            "n_sim": k.n_sim,
            "built": fresh,
        }));
    };
    for &n in &in_lens {
        let keys = vec![
            insample_key(StatisticKind::Tile, n, &options, config.seed),
            insample_key(StatisticKind::Gr, n, &options, config.seed),
        ];
        for (table, fresh) in store.get_or_build_shared(&keys)? {
            record(&table, fresh);
        }
    }
    // Out-of-sample analyses also need the in-sample tile table at the
    // out-stream length: that is the target of the shift-and-scale map.
    for &n in &out_lens {
        let (table, fresh) = store.get_or_build(&outofsample_key(n, &options, config.seed))?;
        record(&table, fresh);
        let key = insample_key(StatisticKind::Tile, n, &options, config.seed);
        let (table, fresh) = store.get_or_build(&key)?;
        record(&table, fresh);
    }
    drop(record);

    write_json(
        &out_dir.join("calibrate-manifest.json"),
        &meta.json_doc(vec![
            ("store_dir", json!(store.dir())),
            ("built", json!(built)),
            ("reused", json!(reused)),
            ("tables", json!(entries)),
        ]),
    )?;
    println!("calibration tables: {built} built, {reused} reused in {}", store.dir().display());
    Ok(())
}

fn cmd_insample(config: &RunConfig) -> Result<()> {
    require_pair(config)?;
    let out_dir = ensure_output_dir(config)?;
    let meta = Metadata::new(config, "insample");
    let options = config.analysis_options()?;
    let inn = asset_innovations(config)?;
    let pair = synchronize_pair(&inn[0], &inn[1])?;
    let tables = prepare_insample_tables(&config.store(), pair.len(), &options, config.seed)?;
    let report = insample_backtest(&pair, &options, &tables, config.seed)?;
    write_backtest(&out_dir, &meta, "insample", &report)?;
    print_backtest(&report);
    Ok(())
}

fn cmd_outsample(config: &RunConfig) -> Result<()> {
    require_pair(config)?;
    let out_dir = ensure_output_dir(config)?;
    let meta = Metadata::new(config, "outsample");
    let options = config.analysis_options()?;
    let inn = asset_innovations(config)?;
    let pair = synchronize_pair(&inn[0], &inn[1])?;
    if pair.len() < options.window + MIN_OUT_TAIL {
        return Err(Error::Data(format!(
            "out-of-sample backtest needs at least window + {MIN_OUT_TAIL} = {} points, got {}",
            options.window + MIN_OUT_TAIL,
            pair.len()
        )));
    }
    let n_out = pair.len() - options.window;
    let tables = prepare_outofsample_tables(&config.store(), n_out, &options, config.seed)?;
    let report = outofsample_backtest(&pair, &options, &tables, config.seed)?;
    write_backtest(&out_dir, &meta, "outsample", &report)?;
    print_backtest(&report);
    Ok(())
}

/// Report JSON plus one CSV per plot. Bulky point arrays leave the JSON and
/// are replaced by the name of the CSV that now holds them; the
/// out-of-sample transformed scatter keeps the raw probtiles (the nudged
/// copy only feeds the tile statistic).
fn write_backtest(
    out_dir: &Path,
    meta: &Metadata,
    prefix: &str,
    report: &BacktestReport,
) -> Result<()> {
    let mut val = serde_json::to_value(report)
        .map_err(|e| Error::Computation(format!("serialize report: {e}")))?;

    let mut handles = Vec::new();
    for sample in &report.samples {
        let prov = sample.provenance();
        let name = format!("{prefix}-plot-{}.csv", prov.as_str());
        let raw;
        let points: &[(f64, f64)] = if prov == Provenance::OutTrfCopula {
            raw = report.out_trf_raw.clone();
            raw.as_deref().unwrap_or_else(|| sample.points())
        } else {
            sample.points()
        };
        write_csv(
            &out_dir.join(&name),
            meta,
            "u1,u2",
            points.iter().map(|(a, b)| format!("{a},{b}")),
        )?;
        handles.push(json!({
            "provenance": prov.as_str(),
            "points": points.len(),
            "file": name,
        }));
    }
    val["samples"] = json!(handles);
    if report.out_trf_raw.is_some() {
        val["out_trf_raw"] =
            json!(format!("{prefix}-plot-{}.csv", Provenance::OutTrfCopula.as_str()));
    }

    for (i, marginal) in report.marginals.iter().enumerate() {
        let name = format!("{prefix}-plot-folded-{}.csv", sanitize_id(&marginal.asset_id));
        write_csv(
            &out_dir.join(&name),
            meta,
            "value,folded_cdf",
            marginal.folded_cdf.iter().map(|(x, f)| format!("{x},{f}")),
        )?;
        val["marginals"][i]["folded_cdf"] = json!(name);
    }

    write_json(
        &out_dir.join(format!("{prefix}-report.json")),
        &meta.json_doc(vec![("report", val)]),
    )
}

fn print_test_line(name: &str, result: &crate::stat_tests::TestResult) {
    match result.p_value {
        Some(p) => println!("  {name}: statistic = {:.6}, p = {p:.4}", result.statistic),
        None => println!("  {name}: statistic = {:.6}, p not calibrated", result.statistic),
    }
}

fn print_backtest(report: &BacktestReport) {
    let (a, b) = (&report.asset_ids.0, &report.asset_ids.1);
    match report.n_out {
        Some(n_out) => println!(
            "{a} / {b}: n = {}, out-of-sample points = {n_out}",
            report.n
        ),
        None => println!("{a} / {b}: n = {}", report.n),
    }
    let p = &report.copula_fit.params;
    println!("  copula fit: rho = {:.4}, nu = {:.3}", p.rho, p.nu);
    if let Some(out_fit) = &report.out_copula_fit {
        let p = &out_fit.params;
        println!("  out-of-sample copula fit: rho = {:.4}, nu = {:.3}", p.rho, p.nu);
    }
    print_test_line("tile", &report.tile);
    print_test_line("gr", &report.gr);
    for flag in &report.flags {
        println!("  flag: {flag}");
    }
}

fn cmd_crosssection(config: &RunConfig, setting_flag: Option<SettingArg>) -> Result<()> {
    config.validate_with_assets(3)?;
    let setting =
        setting_flag.map(SettingArg::setting).unwrap_or_else(|| config.crosssection_setting());
    let out_dir = ensure_output_dir(config)?;
    let meta = Metadata::new(config, "crosssection");
    let options = config.analysis_options()?;
    let inn = asset_innovations(config)?;
    let report = cross_section(&inn, setting, &options, &config.store(), config.seed)?;

    let mut plots = Vec::new();
    let matrices: Vec<(&str, &Vec<Vec<Option<f64>>>)> = [
        ("rho", Some(&report.rho)),
        ("ln-df", Some(&report.ln_df)),
        ("tile-p", Some(&report.tile_p)),
        ("gr-p", report.gr_p.as_ref()),
    ]
    .into_iter()
    .filter_map(|(name, m)| m.map(|m| (name, m)))
    .collect();
    for (name, matrix) in matrices {
        let file = format!("crosssection-{name}.csv");
        write_matrix_csv(&out_dir.join(&file), &meta, &report.asset_ids, matrix)?;
        plots.push(json!({"matrix": name, "file": file}));
    }

    let val = serde_json::to_value(&report)
        .map_err(|e| Error::Computation(format!("serialize report: {e}")))?;
    write_json(
        &out_dir.join("crosssection-report.json"),
        &meta.json_doc(vec![("report", val), ("plots", json!(plots))]),
    )?;

    let k = report.asset_ids.len();
    println!(
        "{} assets, {} ordered pairs, {} evaluated, {} failed",
        k,
        report.ordered_pairs,
        report.evaluated_pairs,
        report.failures.len()
    );
    println!("  tile rejections at 5%: {}", report.tile_rejections_5pct);
    if let Some(n) = report.gr_rejections_5pct {
        println!("  gr rejections at 5%: {n}");
    }
    let order: Vec<&str> =
        report.ordering.permutation.iter().map(|&i| report.asset_ids[i].as_str()).collect();
    println!("  dependence ordering: {}", order.join(" "));
    Ok(())
}

fn write_matrix_csv(
    path: &Path,
    meta: &Metadata,
    ids: &[String],
    matrix: &[Vec<Option<f64>>],
) -> Result<()> {
    let escaped: Vec<String> = ids.iter().map(|id| csv_escape(id)).collect();
    let header = format!("asset,{}", escaped.join(","));
    let rows = escaped.iter().zip(matrix).map(|(id, row)| {
        let cells: Vec<String> = row.iter().map(|&c| fmt_opt(c)).collect();
        format!("{id},{}", cells.join(","))
    });
    write_csv(path, meta, &header, rows)
}

fn cmd_simulate(config: &RunConfig) -> Result<()> {
    config.validate_structure()?;
    let params = config.simulate.params()?;
    let out_dir = ensure_output_dir(config)?;
    let meta = Metadata::new(config, "simulate");

    let mut rng = derive_rng(config.seed, &["simulate"]);
    let sample = sample_copula(&params.copula, params.n_days, &mut rng);
    let marginal = StudentMarginalParams::new(params.marginal_nu, 0.0, 1.0)?;
    let sigma = |t: usize, phase: f64| {
        let angle = std::f64::consts::TAU * (t as f64 + phase) / params.sigma_period;
        params.sigma_base * (1.0 + params.sigma_amplitude * angle.sin())
    };
    // The second asset's volatility cycle is phase-shifted so the pair does
    // not share one deterministic path.
    let phase2 = params.sigma_period / 3.0;
    let (mut prices1, mut prices2) = (vec![100.0f64], vec![100.0f64]);
    for (t, &(u1, u2)) in sample.points().iter().enumerate() {
        let r1 = sigma(t, 0.0) * student_quantile(u1, &marginal)?;
        let r2 = sigma(t, phase2) * student_quantile(u2, &marginal)?;
        prices1.push(prices1.last().expect("nonempty") * r1.exp());
        prices2.push(prices2.last().expect("nonempty") * r2.exp());
    }

    let dates = synthetic_dates(params.n_days + 1);
    let mut files = Vec::new();
    for (id, prices) in [(&params.ids.0, &prices1), (&params.ids.1, &prices2)] {
        let name = format!("{}.csv", sanitize_id(id));
        write_csv(
            &out_dir.join(&name),
            &meta,
            "date,price",
            dates.iter().zip(prices).map(|(d, p)| format!("{d},{p}")),
        )?;
        files.push(json!({"id": id, "file": name, "rows": prices.len()}));
        println!("{id}: {} prices -> {name}", prices.len());
    }
    write_json(
        &out_dir.join("simulate-manifest.json"),
        &meta.json_doc(vec![
            (
                "params",
                serde_json::to_value(&params)
                    .map_err(|e| Error::Computation(format!("serialize params: {e}")))?,
            ),
            ("files", json!(files)),
        ]),
    )
}
