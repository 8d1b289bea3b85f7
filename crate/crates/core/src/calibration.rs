//! Monte-Carlo calibration of the tile and GR statistics.
//!
//! The statistics have no usable closed-form null distribution in either
//! setting, so p-values come from simulated draw tables: iid uniform pairs
//! in the in-sample setting, and the full rolling probtile + empirical
//! Rosenblatt machinery applied to draws from a null copula out-of-sample.
//! Tables are keyed by everything that shapes the null, persisted as a CSV
//! of draws plus a JSON sidecar with the key and a checksum, and reused
//! across runs. Sample lengths between two calibrated tables get linearly
//! interpolated p-values.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::copula::{sample_copula, StudentCopulaParams};
use crate::dist::quantile_type7;
use crate::error::{Error, Result};
use crate::rng::derive_rng_indexed;
use crate::stat_tests::{gr_statistic, tile_statistic, PValueProvenance, TestResult};
use crate::transforms::{nudge_interior, rolling_out_of_sample, KernelSpec};

/// Default replication counts and the floor below which a table is too
/// coarse to give meaningful tail p-values.
pub const DEFAULT_NSIM_INSAMPLE: usize = 2000;
pub const DEFAULT_NSIM_OUTOFSAMPLE: usize = 1000;
pub const MIN_NSIM: usize = 500;

/// Which statistic a table calibrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticKind {
    Tile,
    Gr,
}

impl StatisticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatisticKind::Tile => "tile",
            StatisticKind::Gr => "gr",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether the statistic is computed on analytically transformed in-sample
/// points or on the rolling out-of-sample stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    InSample,
    OutOfSample,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::InSample => "in-sample",
            Setting::OutOfSample => "out-of-sample",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Data-generating model for the simulated null. In-sample nulls are always
/// independence (a correctly transformed sample is iid uniform); the
/// out-of-sample rolling machinery additionally feels the dependence of the
/// underlying pairs, so its null carries the copula parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum NullModel {
    Independence,
    Student { rho: f64, nu: f64 },
}

impl NullModel {
    pub fn student(params: StudentCopulaParams) -> Self {
        NullModel::Student { rho: params.rho, nu: params.nu }
    }

    fn tag(&self) -> String {
        match self {
            NullModel::Independence => "independence".into(),
            NullModel::Student { rho, nu } => format!("student:rho={rho}:nu={nu}"),
        }
    }
}

/// Everything that determines a table's null distribution (and the stream of
/// random draws used to simulate it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationKey {
    pub kind: StatisticKind,
    pub setting: Setting,
    /// Number of points each simulated statistic is computed on. In the
    /// out-of-sample setting this counts post-window points; each
    /// replication simulates `sample_len + window` pairs.
    pub sample_len: usize,
    pub null: NullModel,
    /// Rolling window length; out-of-sample only.
    pub window: Option<usize>,
    /// Kernel of the empirical Rosenblatt step; out-of-sample only.
    pub kernel: Option<KernelSpec>,
    /// Tile grid resolution; tile statistic only.
    pub tiles_per_axis: Option<usize>,
    pub n_sim: usize,
    pub seed: u64,
}

impl CalibrationKey {
    pub fn validate(&self) -> Result<()> {
        if self.n_sim < MIN_NSIM {
            return Err(Error::Config(format!(
                "calibration needs at least {MIN_NSIM} replications, got {}",
                self.n_sim
            )));
        }
        if self.sample_len < 10 {
            return Err(Error::Config(format!(
                "calibration sample length must be at least 10, got {}",
                self.sample_len
            )));
        }
        match self.kind {
            StatisticKind::Tile => match self.tiles_per_axis {
                Some(n) if n >= 2 => {}
                Some(n) => {
                    return Err(Error::Config(format!(
                        "tile calibration needs at least 2 tiles per axis, got {n}"
                    )))
                }
                None => {
                    return Err(Error::Config(
                        "tile calibration needs tiles_per_axis".into(),
                    ))
                }
            },
            StatisticKind::Gr => {
                if self.tiles_per_axis.is_some() {
                    return Err(Error::Config(
                        "tiles_per_axis does not apply to the GR statistic".into(),
                    ));
                }
            }
        }
        match self.setting {
            Setting::InSample => {
                if self.window.is_some() || self.kernel.is_some() {
                    return Err(Error::Config(
                        "window and kernel do not apply to in-sample calibration".into(),
                    ));
                }
                if self.null != NullModel::Independence {
                    return Err(Error::Config(
                        "in-sample calibration is always against independence".into(),
                    ));
                }
            }
            Setting::OutOfSample => {
                match self.window {
                    Some(m) if m >= 2 => {}
                    _ => {
                        return Err(Error::Config(
                            "out-of-sample calibration needs a window of at least 2".into(),
                        ))
                    }
                }
                match &self.kernel {
                    Some(k) => k.validate()?,
                    None => {
                        return Err(Error::Config(
                            "out-of-sample calibration needs a kernel".into(),
                        ))
                    }
                }
                if let NullModel::Student { rho, nu } = self.null {
                    StudentCopulaParams::new(rho, nu)?;
                }
            }
        }
        Ok(())
    }

    /// Hex digest of the canonical JSON encoding; the persisted file stem.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("key serialization is infallible");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..8])
    }

    /// Short human-readable identifier used in p-value provenance.
    pub fn label(&self) -> String {
        format!("{}:{}:n={}:{}", self.kind, self.setting, self.sample_len, self.digest())
    }

    /// Tags of the rng stream family this key draws from. The statistic
    /// kind and tile resolution are deliberately absent: tables that differ
    /// only in those share replications, so a tile and a GR table built from
    /// one key pair describe the same simulated samples.
    fn stream_tags(&self) -> Vec<String> {
        let mut tags = vec!["calibrate".to_string(), self.setting.as_str().to_string()];
        tags.push(self.null.tag());
        tags.push(format!("len={}", self.sample_len));
        if let Some(m) = self.window {
            tags.push(format!("window={m}"));
        }
        tags
    }
}

/// A sorted table of simulated null draws.
#[derive(Clone, Debug)]
pub struct CalibrationTable {
    key: CalibrationKey,
    draws: Vec<f64>,
}

impl CalibrationTable {
    pub fn new(key: CalibrationKey, mut draws: Vec<f64>) -> Result<Self> {
        key.validate()?;
        if draws.len() != key.n_sim {
            return Err(Error::Data(format!(
                "table holds {} draws but its key says n_sim = {}",
                draws.len(),
                key.n_sim
            )));
        }
        if draws.iter().any(|d| !d.is_finite()) {
            return Err(Error::Data("calibration draws contain non-finite values".into()));
        }
        draws.sort_unstable_by(f64::total_cmp);
        Ok(CalibrationTable { key, draws })
    }

    pub fn key(&self) -> &CalibrationKey {
        &self.key
    }

    /// Draws in ascending order.
    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        quantile_type7(&self.draws, p)
    }

    /// Tail p-value of one observed statistic against this table alone:
    /// `(#{draw >= stat} + 1/2) / (n_sim + 1)`.
    pub fn tail_p(&self, statistic: f64) -> f64 {
        let below = self.draws.partition_point(|&d| d < statistic);
        let at_or_above = self.draws.len() - below;
        (at_or_above as f64 + 0.5) / (self.draws.len() as f64 + 1.0)
    }
}

fn compute_statistic(kind: StatisticKind, points: &[(f64, f64)], tiles: Option<usize>) -> f64 {
    match kind {
        StatisticKind::Tile => tile_statistic(points, tiles.expect("validated by key")),
        StatisticKind::Gr => gr_statistic(points),
    }
}

/// Build the table a key describes, simulating its null from scratch.
/// Replications run in parallel; the per-replication stream is derived from
/// the key, so results do not depend on the worker count.
pub fn build_table(key: &CalibrationKey) -> Result<CalibrationTable> {
    build_tables_shared(std::slice::from_ref(key)).map(|mut v| v.pop().expect("one key in"))
}

/// Build several tables that share simulated replications. All keys must
/// agree on everything except the statistic kind and tile resolution; each
/// replication is simulated once and scored once per key. A single-key call
/// is bit-identical to `build_table`.
pub fn build_tables_shared(keys: &[CalibrationKey]) -> Result<Vec<CalibrationTable>> {
    let first = keys.first().ok_or_else(|| Error::Config("no calibration keys given".into()))?;
    for key in keys {
        key.validate()?;
        let same = key.setting == first.setting
            && key.sample_len == first.sample_len
            && key.null == first.null
            && key.window == first.window
            && key.kernel == first.kernel
            && key.n_sim == first.n_sim
            && key.seed == first.seed;
        if !same {
            return Err(Error::Config(
                "tables can share replications only when their keys differ in statistic \
                 kind or tile resolution alone"
                    .into(),
            ));
        }
    }

    let tag_strings = first.stream_tags();
    let tags: Vec<&str> = tag_strings.iter().map(|s| s.as_str()).collect();
    let per_rep: Vec<Result<Vec<f64>>> = (0..first.n_sim)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derive_rng_indexed(first.seed, &tags, rep as u64);
            let points = simulate_null_points(first, &mut rng)?;
            Ok(keys.iter().map(|k| compute_statistic(k.kind, &points, k.tiles_per_axis)).collect())
        })
        .collect();

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(first.n_sim); keys.len()];
    for rep in per_rep {
        for (col, stat) in columns.iter_mut().zip(rep?) {
            col.push(stat);
        }
    }
    keys.iter()
        .zip(columns)
        .map(|(key, draws)| CalibrationTable::new(key.clone(), draws))
        .collect()
}

/// One simulated null sample of `sample_len` unit-square points, ready for
/// a statistic: iid uniforms in-sample, the nudged rolling Rosenblatt stream
/// out-of-sample.
fn simulate_null_points<R: Rng + ?Sized>(
    key: &CalibrationKey,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    match key.setting {
        Setting::InSample => Ok((0..key.sample_len)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect()),
        Setting::OutOfSample => {
            let m = key.window.expect("validated");
            let kernel = key.kernel.expect("validated");
            let total = key.sample_len + m;
            let pairs: Vec<(f64, f64)> = match key.null {
                NullModel::Independence => {
                    (0..total).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
                }
                NullModel::Student { rho, nu } => {
                    let params = StudentCopulaParams::new(rho, nu)?;
                    sample_copula(&params, total, rng).points().to_vec()
                }
            };
            let rolled = rolling_out_of_sample(&pairs, m, &kernel, rng)?;
            Ok(rolled
                .out_trf
                .into_iter()
                .map(|(u1, u2)| (u1, nudge_interior(u2, m)))
                .collect())
        }
    }
}

/// Convenience wrappers building a key and its table in one step.
pub fn calibrate_insample(
    kind: StatisticKind,
    sample_len: usize,
    tiles_per_axis: Option<usize>,
    n_sim: usize,
    seed: u64,
) -> Result<CalibrationTable> {
    build_table(&CalibrationKey {
        kind,
        setting: Setting::InSample,
        sample_len,
        null: NullModel::Independence,
        window: None,
        kernel: None,
        tiles_per_axis,
        n_sim,
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn calibrate_outofsample(
    kind: StatisticKind,
    null: NullModel,
    sample_len: usize,
    window: usize,
    kernel: KernelSpec,
    tiles_per_axis: Option<usize>,
    n_sim: usize,
    seed: u64,
) -> Result<CalibrationTable> {
    build_table(&CalibrationKey {
        kind,
        setting: Setting::OutOfSample,
        sample_len,
        null,
        window: Some(window),
        kernel: Some(kernel),
        tiles_per_axis,
        n_sim,
        seed,
    })
}

/// Monte-Carlo p-value of an observed statistic against one or more tables
/// of the same family, interpolating linearly in the sample length.
///
/// With a table at the exact length the answer is that table's tail
/// p-value. Between two calibrated lengths the two bracketing tables are
/// mixed linearly; outside the calibrated range the nearest table is used
/// as-is and the result is flagged as extrapolated (and as far from range
/// beyond 20% outside).
pub fn p_value(
    statistic: f64,
    tables: &[&CalibrationTable],
    sample_len: usize,
) -> Result<TestResult> {
    if tables.is_empty() {
        return Err(Error::Config("p-value needs at least one calibration table".into()));
    }
    let first = tables[0].key();
    for t in tables {
        let k = t.key();
        let compatible = k.kind == first.kind
            && k.setting == first.setting
            && k.null == first.null
            && k.window == first.window
            && k.kernel == first.kernel
            && k.tiles_per_axis == first.tiles_per_axis;
        if !compatible {
            return Err(Error::Config(
                "p-value tables must agree on everything except sample length".into(),
            ));
        }
    }
    let mut sorted: Vec<&CalibrationTable> = tables.to_vec();
    sorted.sort_by_key(|t| t.key().sample_len);
    sorted.dedup_by_key(|t| t.key().sample_len);

    let lens: Vec<usize> = sorted.iter().map(|t| t.key().sample_len).collect();
    let (idx, weights, extrapolated, far_from_range) = bracket(&lens, sample_len);
    let picked: Vec<&CalibrationTable> = idx.iter().map(|&i| sorted[i]).collect();
    let p = picked.iter().zip(&weights).map(|(t, w)| w * t.tail_p(statistic)).sum();
    Ok(TestResult {
        statistic,
        p_value: Some(p),
        provenance: PValueProvenance::MonteCarlo {
            tables: picked.iter().map(|t| t.key().label()).collect(),
            weights,
            extrapolated,
            far_from_range,
        },
    })
}

/// Indices and linear weights of the calibrated lengths used for sample
/// length `n`, plus the extrapolation flags. `lens` must be sorted,
/// deduplicated and nonempty.
fn bracket(lens: &[usize], n: usize) -> (Vec<usize>, Vec<f64>, bool, bool) {
    let last = *lens.last().expect("nonempty");
    let (idx, weights, extrapolated) = if let Some(i) = lens.iter().position(|&l| l == n) {
        (vec![i], vec![1.0], false)
    } else if n < lens[0] {
        (vec![0], vec![1.0], true)
    } else if n > last {
        (vec![lens.len() - 1], vec![1.0], true)
    } else {
        let hi = lens.partition_point(|&l| l < n);
        let w_hi = (n - lens[hi - 1]) as f64 / (lens[hi] - lens[hi - 1]) as f64;
        (vec![hi - 1, hi], vec![1.0 - w_hi, w_hi], false)
    };
    let far = (n as f64) < 0.8 * lens[0] as f64 || (n as f64) > 1.2 * last as f64;
    (idx, weights, extrapolated, far)
}

/// Affine map carrying an out-of-sample tile statistic onto the in-sample
/// null scale: match the medians and the 0.2-0.8 inter-quantile spreads of
/// the two simulated nulls.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShiftScaleMap {
    pub scale: f64,
    pub out_median: f64,
    pub in_median: f64,
}

impl ShiftScaleMap {
    pub fn apply(&self, statistic: f64) -> f64 {
        self.scale * (statistic - self.out_median) + self.in_median
    }
}

pub fn shift_scale_map(
    out_table: &CalibrationTable,
    in_table: &CalibrationTable,
) -> Result<ShiftScaleMap> {
    if out_table.key().kind != StatisticKind::Tile || in_table.key().kind != StatisticKind::Tile {
        return Err(Error::Config(
            "the shift-and-scale map is defined for tile statistics only".into(),
        ));
    }
    if out_table.key().setting != Setting::OutOfSample
        || in_table.key().setting != Setting::InSample
    {
        return Err(Error::Config(
            "shift-and-scale maps an out-of-sample table onto an in-sample table".into(),
        ));
    }
    if out_table.key().tiles_per_axis != in_table.key().tiles_per_axis {
        return Err(Error::Config(
            "shift-and-scale tables must use the same tile resolution".into(),
        ));
    }
    let spread_in = in_table.quantile(0.8)? - in_table.quantile(0.2)?;
    let spread_out = out_table.quantile(0.8)? - out_table.quantile(0.2)?;
    if spread_in <= 0.0 || spread_out <= 0.0 {
        return Err(Error::Computation(format!(
            "degenerate calibration spread (in {spread_in}, out {spread_out})"
        )));
    }
    Ok(ShiftScaleMap {
        scale: spread_in / spread_out,
        out_median: out_table.quantile(0.5)?,
        in_median: in_table.quantile(0.5)?,
    })
}

/// Out-of-sample tile p-value through the shift-and-scale correction.
///
/// `table_pairs` holds one (out-of-sample table, in-sample table) pair per
/// calibrated length; the two tables of a pair must share their sample
/// length. At each picked length the observed statistic is carried onto the
/// in-sample scale by that length's map and converted with the in-sample
/// table's tail probability; lengths bracket and mix exactly as in
/// [`p_value`]. Returns the test result (statistic kept on the original
/// out-of-sample scale) and the maps actually used, aligned with the
/// provenance weights.
pub fn shift_scale_p_value(
    statistic: f64,
    table_pairs: &[(&CalibrationTable, &CalibrationTable)],
    sample_len: usize,
) -> Result<(TestResult, Vec<ShiftScaleMap>)> {
    if table_pairs.is_empty() {
        return Err(Error::Config(
            "shift-and-scale p-value needs at least one table pair".into(),
        ));
    }
    let out0 = table_pairs[0].0.key();
    let in0 = table_pairs[0].1.key();
    for (out, within) in table_pairs {
        let (ko, ki) = (out.key(), within.key());
        if ko.sample_len != ki.sample_len {
            return Err(Error::Config(
                "each shift-and-scale table pair must share its sample length".into(),
            ));
        }
        let compatible = ko.null == out0.null
            && ko.window == out0.window
            && ko.kernel == out0.kernel
            && ko.tiles_per_axis == out0.tiles_per_axis
            && ki.tiles_per_axis == in0.tiles_per_axis;
        if !compatible {
            return Err(Error::Config(
                "shift-and-scale table pairs must agree on everything except sample length"
                    .into(),
            ));
        }
    }
    let mut sorted: Vec<(&CalibrationTable, &CalibrationTable)> = table_pairs.to_vec();
    sorted.sort_by_key(|(out, _)| out.key().sample_len);
    sorted.dedup_by_key(|(out, _)| out.key().sample_len);

    let lens: Vec<usize> = sorted.iter().map(|(out, _)| out.key().sample_len).collect();
    let (idx, weights, extrapolated, far_from_range) = bracket(&lens, sample_len);
    let mut p = 0.0;
    let mut labels = Vec::with_capacity(idx.len());
    let mut maps = Vec::with_capacity(idx.len());
    for (&i, w) in idx.iter().zip(&weights) {
        let (out_t, in_t) = sorted[i];
        let map = shift_scale_map(out_t, in_t)?;
        p += w * in_t.tail_p(map.apply(statistic));
        labels.push(format!("{} => {}", out_t.key().label(), in_t.key().label()));
        maps.push(map);
    }
    Ok((
        TestResult {
            statistic,
            p_value: Some(p),
            provenance: PValueProvenance::MonteCarlo {
                tables: labels,
                weights,
                extrapolated,
                far_from_range,
            },
        },
        maps,
    ))
}

// --- persistence ---

const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    tool_version: String,
    key: CalibrationKey,
    n_draws: usize,
    /// SHA-256 of the draw file's bytes.
    draws_sha256: String,
}

/// Directory of persisted tables. Each table is a pair of files named by
/// the key digest: `calib-<digest>.csv` (the sorted draws, one per line
/// under a `statistic` header) and `calib-<digest>.json` (the sidecar).
#[derive(Clone, Debug)]
pub struct CalibrationStore {
    dir: PathBuf,
}

/// Environment variable naming the default table directory.
pub const CALIB_DIR_ENV: &str = "COPBACK_CALIB_DIR";

impl CalibrationStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CalibrationStore { dir: dir.into() }
    }

    /// Explicit directory if given, else `COPBACK_CALIB_DIR`, else
    /// `calibration` under the current directory.
    pub fn from_env_or(dir: Option<&Path>) -> Self {
        let dir = dir
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CALIB_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("calibration"));
        CalibrationStore { dir }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn csv_path(&self, key: &CalibrationKey) -> PathBuf {
        self.dir.join(format!("calib-{}.csv", key.digest()))
    }

    fn json_path(&self, key: &CalibrationKey) -> PathBuf {
        self.dir.join(format!("calib-{}.json", key.digest()))
    }

    pub fn save(&self, table: &CalibrationTable) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let csv_path = self.csv_path(table.key());

        let mut csv = Vec::with_capacity(table.draws().len() * 20 + 16);
        csv.extend_from_slice(b"statistic\n");
        for d in table.draws() {
            writeln!(csv, "{d}").expect("vec write is infallible");
        }
        let sidecar = Sidecar {
            schema_version: SCHEMA_VERSION,
            tool_version: crate::VERSION.to_string(),
            key: table.key().clone(),
            n_draws: table.draws().len(),
            draws_sha256: hex::encode(Sha256::digest(&csv)),
        };
        std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = self.json_path(table.key());
        let json =
            serde_json::to_string_pretty(&sidecar).expect("sidecar serialization is infallible");
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }

    /// Load the table for a key if both files exist, verifying the checksum
    /// and that the stored key really equals the requested one.
    pub fn find(&self, key: &CalibrationKey) -> Result<Option<CalibrationTable>> {
        let json_path = self.json_path(key);
        let bytes = match std::fs::read(&json_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&json_path, e)),
        };
        let sidecar: Sidecar = serde_json::from_slice(&bytes).map_err(|e| {
            Error::Data(format!("{}: bad calibration sidecar: {e}", json_path.display()))
        })?;
        if sidecar.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "{}: calibration schema {} is not supported (want {SCHEMA_VERSION})",
                json_path.display(),
                sidecar.schema_version
            )));
        }
        if &sidecar.key != key {
            return Err(Error::Data(format!(
                "{}: stored key does not match its digest; stale or corrupt table",
                json_path.display()
            )));
        }

        let csv_path = self.csv_path(key);
        let csv = std::fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let digest = hex::encode(Sha256::digest(&csv));
        if digest != sidecar.draws_sha256 {
            return Err(Error::Data(format!(
                "{}: checksum mismatch, table is corrupt",
                csv_path.display()
            )));
        }

        let text = std::str::from_utf8(&csv)
            .map_err(|_| Error::Data(format!("{}: not utf-8", csv_path.display())))?;
        let mut lines = text.lines();
        if lines.next() != Some("statistic") {
            return Err(Error::parse(&csv_path, 1, "expected header `statistic`"));
        }
        let mut draws = Vec::with_capacity(sidecar.n_draws);
        for (i, line) in lines.enumerate() {
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|e| Error::parse(&csv_path, i as u64 + 2, format!("bad float: {e}")))?;
            draws.push(v);
        }
        if draws.len() != sidecar.n_draws {
            return Err(Error::Data(format!(
                "{}: expected {} draws, found {}",
                csv_path.display(),
                sidecar.n_draws,
                draws.len()
            )));
        }
        Ok(Some(CalibrationTable::new(key.clone(), draws)?))
    }

    /// Load the table for a key, building and persisting it on a miss.
    /// The boolean reports whether a build happened.
    pub fn get_or_build(&self, key: &CalibrationKey) -> Result<(CalibrationTable, bool)> {
        if let Some(table) = self.find(key)? {
            return Ok((table, false));
        }
        let table = build_table(key)?;
        self.save(&table)?;
        Ok((table, true))
    }

    /// Like `get_or_build` for a family of keys sharing replications:
    /// whatever is missing is built in one simulation pass and persisted.
    pub fn get_or_build_shared(
        &self,
        keys: &[CalibrationKey],
    ) -> Result<Vec<(CalibrationTable, bool)>> {
        let mut found: Vec<Option<CalibrationTable>> = Vec::with_capacity(keys.len());
        for key in keys {
            found.push(self.find(key)?);
        }
        let missing: Vec<CalibrationKey> = keys
            .iter()
            .zip(&found)
            .filter(|(_, f)| f.is_none())
            .map(|(k, _)| k.clone())
            .collect();
        let mut built = if missing.is_empty() {
            Vec::new()
        } else {
            build_tables_shared(&missing)?
        };
        for table in &built {
            self.save(table)?;
        }
        let mut out = Vec::with_capacity(keys.len());
        for f in found {
            match f {
                Some(table) => out.push((table, false)),
                None => out.push((built.remove(0), true)),
            }
        }
        Ok(out)
    }
}
