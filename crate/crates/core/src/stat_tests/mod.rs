//! Test statistics for uniformity on [0,1] and [0,1]^2: the tile test, the
//! GR empirical-copula statistic, and one-sample KS / Cramér-von Mises.

pub mod asymptotic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of sample points over an N x N tiling of the unit square.
/// Tiles are half-open; the last row/column is closed so boundary points
/// are kept.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TileGrid {
    tiles_per_axis: usize,
    counts: Vec<u32>,
}

impl TileGrid {
    pub fn from_points(points: &[(f64, f64)], tiles_per_axis: usize) -> Result<TileGrid> {
        if tiles_per_axis < 2 {
            return Err(Error::Config(format!(
                "tile grid needs at least 2 tiles per axis, got {tiles_per_axis}"
            )));
        }
        let n = tiles_per_axis;
        let mut counts = vec![0u32; n * n];
        for &(u1, u2) in points {
            debug_assert!((0.0..=1.0).contains(&u1) && (0.0..=1.0).contains(&u2));
            let i = tile_index(u1, n);
            let j = tile_index(u2, n);
            counts[i * n + j] += 1;
        }
        Ok(TileGrid { tiles_per_axis: n, counts })
    }

    pub fn tiles_per_axis(&self) -> usize {
        self.tiles_per_axis
    }

    /// Row-major counts (first axis major).
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Standard deviation of the per-tile counts around n/N^2.
    pub fn count_std(&self) -> f64 {
        let tiles = self.counts.len() as f64;
        let mu = self.total() as f64 / tiles;
        let ss: f64 = self.counts.iter().map(|&c| (c as f64 - mu).powi(2)).sum();
        (ss / tiles).sqrt()
    }
}

fn tile_index(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

/// Tile-test statistic sigma_tile.
pub fn tile_statistic(points: &[(f64, f64)], tiles_per_axis: usize) -> f64 {
    TileGrid::from_points(points, tiles_per_axis)
        .expect("tiles_per_axis validated by caller")
        .count_std()
}

/// GR empirical-copula statistic, the exact closed form of
/// n * integral (C_n - Pi)^2 over the unit square:
/// S = (1/n) sum_i sum_j prod_k (1 - max(u_ik, u_jk))
///     - (1/2) sum_i prod_k (1 - u_ik^2) + n/9.
pub fn gr_statistic(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let u: Vec<f64> = points.iter().map(|p| p.0).collect();
    let v: Vec<f64> = points.iter().map(|p| p.1).collect();

    // Pair sum via the diagonal plus twice the upper triangle.
    let mut pair_sum = 0.0;
    for i in 0..n {
        pair_sum += (1.0 - u[i]) * (1.0 - v[i]);
    }
    for i in 0..n {
        let (ui, vi) = (u[i], v[i]);
        let mut row = 0.0;
        for j in (i + 1)..n {
            row += (1.0 - ui.max(u[j])) * (1.0 - vi.max(v[j]));
        }
        pair_sum += 2.0 * row;
    }

    let single_sum: f64 = points
        .iter()
        .map(|&(a, b)| (1.0 - a * a) * (1.0 - b * b))
        .sum();

    let nf = n as f64;
    pair_sum / nf - 0.5 * single_sum + nf / 9.0
}

/// How a p-value was obtained.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum PValueProvenance {
    /// Large-sample distribution of the statistic.
    Asymptotic,
    /// Monte-Carlo calibration tables, possibly interpolated in the sample
    /// length. `far_from_range` marks lengths more than 20% outside the
    /// calibrated range (flat extrapolation).
    MonteCarlo {
        tables: Vec<String>,
        weights: Vec<f64>,
        extrapolated: bool,
        far_from_range: bool,
    },
    /// Statistic reported without any p-value.
    Uncalibrated { reason: String },
}

/// A test statistic with its (optional) p-value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Absent for uncalibrated statistics (e.g. the GR statistic in the
    /// out-of-sample setting).
    pub p_value: Option<f64>,
    pub provenance: PValueProvenance,
}

fn check_uniform_sample(sample: &[f64]) -> Result<()> {
    if sample.len() < 10 {
        return Err(Error::Data(format!(
            "uniformity test needs at least 10 values, got {}",
            sample.len()
        )));
    }
    for &x in sample {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Data(format!("uniformity test input {x} outside [0,1]")));
        }
    }
    Ok(())
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0,1).
pub fn ks_statistic(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        d = d.max((i + 1) as f64 / n - x);
        d = d.max(x - i as f64 / n);
    }
    d
}

/// KS test with the asymptotic p-value (small-sample corrected argument).
pub fn ks_uniformity(sample: &[f64]) -> Result<TestResult> {
    check_uniform_sample(sample)?;
    let d = ks_statistic(sample);
    let n = sample.len() as f64;
    let arg = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    Ok(TestResult {
        statistic: d,
        p_value: Some(asymptotic::kolmogorov_sf(arg).clamp(0.0, 1.0)),
        provenance: PValueProvenance::Asymptotic,
    })
}

/// One-sample Cramér-von Mises statistic W^2 against Uniform(0,1).
pub fn cvm_statistic(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut w2 = 1.0 / (12.0 * n);
    for (i, x) in s.iter().enumerate() {
        let target = (2.0 * (i + 1) as f64 - 1.0) / (2.0 * n);
        w2 += (x - target).powi(2);
    }
    w2
}

/// Cramér-von Mises test with the asymptotic p-value.
pub fn cvm_uniformity(sample: &[f64]) -> Result<TestResult> {
    check_uniform_sample(sample)?;
    let w2 = cvm_statistic(sample);
    Ok(TestResult {
        statistic: w2,
        p_value: Some((1.0 - asymptotic::cvm_cdf(w2)).clamp(0.0, 1.0)),
        provenance: PValueProvenance::Asymptotic,
    })
}
