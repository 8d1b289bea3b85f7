//! Run configuration. One versioned TOML file drives every subcommand; the
//! CLI may override the seed and the directories, nothing else. Sections are
//! optional and sparse: any field left out falls back to the library default,
//! so a minimal config is just `version`, `seed`, and `output_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationStore, Setting};
use crate::copula::StudentCopulaParams;
use crate::error::{Error, Result};
use crate::pipelines::{AnalysisOptions, Orientation};
use crate::transforms::{KernelShape, KernelSpec};
use crate::volatility::LmArchParams;

/// Schema version this build reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// One input asset: an identifier and a `date,price` CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub id: String,
    pub file: PathBuf,
}

/// Sparse overrides of the volatility-filter defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolatilitySection {
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub geometric_factor: Option<f64>,
    pub logarithmic_decay_horizon: Option<f64>,
    pub burn_in: Option<usize>,
}

impl VolatilitySection {
    pub fn params(&self) -> LmArchParams {
        let mut p = LmArchParams::default();
        if let Some(v) = self.tau_min {
            p.tau_min = v;
        }
        if let Some(v) = self.tau_max {
            p.tau_max = v;
        }
        if let Some(v) = self.geometric_factor {
            p.geometric_factor = v;
        }
        if let Some(v) = self.logarithmic_decay_horizon {
            p.logarithmic_decay_horizon = v;
        }
        if let Some(v) = self.burn_in {
            p.burn_in = v;
        }
        p
    }
}

/// Sparse overrides of the probtile-kernel defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub shape: Option<KernelShape>,
    pub half_width: Option<f64>,
}

impl KernelSection {
    pub fn spec(&self) -> KernelSpec {
        let mut k = KernelSpec::default();
        if let Some(v) = self.shape {
            k.shape = v;
        }
        if let Some(v) = self.half_width {
            k.half_width = v;
        }
        k
    }
}

/// Sparse overrides of the backtest defaults, plus the cross-section setting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestsSection {
    pub tiles_per_axis: Option<usize>,
    pub window: Option<usize>,
    pub orientation: Option<Orientation>,
    pub nsim_insample: Option<usize>,
    pub nsim_outofsample: Option<usize>,
    /// Calibrate at these sample lengths and interpolate, instead of building
    /// one table per exact length.
    pub table_lengths: Option<Vec<usize>>,
    pub reference_rho: Option<f64>,
    pub reference_nu: Option<f64>,
    /// Which setting `crosssection` runs; single-pair commands ignore this.
    pub setting: Option<Setting>,
}

/// Sparse overrides of the synthetic-data generator defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_days: Option<usize>,
    pub rho: Option<f64>,
    pub nu: Option<f64>,
    pub marginal_nu: Option<f64>,
    pub sigma_base: Option<f64>,
    pub sigma_amplitude: Option<f64>,
    pub sigma_period: Option<f64>,
    pub ids: Option<(String, String)>,
}

/// Fully resolved generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateParams {
    pub n_days: usize,
    pub copula: StudentCopulaParams,
    pub marginal_nu: f64,
    pub sigma_base: f64,
    pub sigma_amplitude: f64,
    pub sigma_period: f64,
    pub ids: (String, String),
}

impl SimulateSection {
    pub fn params(&self) -> Result<SimulateParams> {
        let n_days = self.n_days.unwrap_or(6000);
        if n_days < 10 {
            return Err(Error::Config(format!("simulate.n_days = {n_days}, need at least 10")));
        }
        let copula = StudentCopulaParams::new(self.rho.unwrap_or(0.6), self.nu.unwrap_or(6.0))
            .map_err(|e| Error::Config(format!("simulate copula: {e}")))?;
        let marginal_nu = self.marginal_nu.unwrap_or(6.0);
        if !marginal_nu.is_finite() || marginal_nu <= 0.0 {
            return Err(Error::Config(format!("simulate.marginal_nu = {marginal_nu}, need > 0")));
        }
        let sigma_base = self.sigma_base.unwrap_or(0.01);
        if !sigma_base.is_finite() || sigma_base <= 0.0 {
            return Err(Error::Config(format!("simulate.sigma_base = {sigma_base}, need > 0")));
        }
        let sigma_amplitude = self.sigma_amplitude.unwrap_or(0.5);
        if !sigma_amplitude.is_finite() || !(0.0..1.0).contains(&sigma_amplitude) {
            return Err(Error::Config(format!(
                "simulate.sigma_amplitude = {sigma_amplitude}, need within [0, 1)"
            )));
        }
        let sigma_period = self.sigma_period.unwrap_or(1000.0);
        if !sigma_period.is_finite() || sigma_period <= 1.0 {
            return Err(Error::Config(format!(
                "simulate.sigma_period = {sigma_period}, need > 1"
            )));
        }
        let ids = self
            .ids
            .clone()
            .unwrap_or_else(|| ("sim-a".to_string(), "sim-b".to_string()));
        if ids.0 == ids.1 {
            return Err(Error::Config(format!("simulate ids must differ, both are {:?}", ids.0)));
        }
        Ok(SimulateParams {
            n_days,
            copula,
            marginal_nu,
            sigma_base,
            sigma_amplitude,
            sigma_period,
            ids,
        })
    }
}

/// The whole run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub calibration_dir: Option<PathBuf>,
    #[serde(default)]
    pub assets: Vec<AssetSpec>,
    #[serde(default)]
    pub volatility: VolatilitySection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub tests: TestsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

impl RunConfig {
    /// Parse a TOML file. Unknown keys anywhere are errors, so typos do not
    /// silently fall back to defaults.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that does not require the asset files to exist:
    /// schema version, parameter ranges, and asset-id uniqueness.
    pub fn validate_structure(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported, this build reads version {CONFIG_VERSION}",
                self.version
            )));
        }
        self.lmarch().validate().map_err(|e| Error::Config(format!("volatility: {e}")))?;
        self.analysis_options()?.validate()?;
        self.simulate.params()?;
        for (i, a) in self.assets.iter().enumerate() {
            if a.id.is_empty() {
                return Err(Error::Config(format!("asset {i}: empty id")));
            }
            if self.assets[..i].iter().any(|b| b.id == a.id) {
                return Err(Error::Config(format!("duplicate asset id {:?}", a.id)));
            }
        }
        Ok(())
    }

    /// Structure checks plus existence of every referenced asset file.
    /// Commands that read price data call this before doing any work.
    pub fn validate_with_assets(&self, min_assets: usize) -> Result<()> {
        self.validate_structure()?;
        if self.assets.len() < min_assets {
            return Err(Error::Config(format!(
                "{} asset(s) configured, this command needs at least {min_assets}",
                self.assets.len()
            )));
        }
        for a in &self.assets {
            if !a.file.is_file() {
                return Err(Error::Config(format!(
                    "asset {:?}: file {} does not exist",
                    a.id,
                    a.file.display()
                )));
            }
        }
        Ok(())
    }

    pub fn lmarch(&self) -> LmArchParams {
        self.volatility.params()
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        self.kernel.spec()
    }

    /// Tests section merged onto the backtest defaults.
    pub fn analysis_options(&self) -> Result<AnalysisOptions> {
        let mut o = AnalysisOptions { kernel: self.kernel_spec(), ..AnalysisOptions::default() };
        let t = &self.tests;
        if let Some(v) = t.tiles_per_axis {
            o.tiles_per_axis = v;
        }
        if let Some(v) = t.window {
            o.window = v;
        }
        if let Some(v) = t.orientation {
            o.orientation = v;
        }
        if let Some(v) = t.nsim_insample {
            o.nsim_insample = v;
        }
        if let Some(v) = t.nsim_outofsample {
            o.nsim_outofsample = v;
        }
        if let Some(v) = &t.table_lengths {
            o.table_lengths = v.clone();
        }
        if t.reference_rho.is_some() || t.reference_nu.is_some() {
            o.reference_null = StudentCopulaParams::new(
                t.reference_rho.unwrap_or(o.reference_null.rho),
                t.reference_nu.unwrap_or(o.reference_null.nu),
            )
            .map_err(|e| Error::Config(format!("reference null: {e}")))?;
        }
        o.validate()?;
        Ok(o)
    }

    /// Which setting `crosssection` runs (default in-sample).
    pub fn crosssection_setting(&self) -> Setting {
        self.tests.setting.unwrap_or(Setting::InSample)
    }

    /// Calibration store honouring the config, then `COPBACK_CALIB_DIR`,
    /// then `./calibration`.
    pub fn store(&self) -> CalibrationStore {
        CalibrationStore::from_env_or(self.calibration_dir.as_deref())
    }

    /// Hash of the effective configuration (after any CLI overrides), stamped
    /// into every output file. 16 hex chars of the SHA-256 of the canonical
    /// JSON form.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}
