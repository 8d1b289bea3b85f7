//! Cross-sectional studies: run the chosen pipeline over every ordered
//! asset pair, collect correlation / degrees-of-freedom / p-value matrices,
//! and lay the assets out on a circle so strongly dependent ones sit close.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    insample_backtest, outofsample_backtest, prepare_insample_tables, prepare_outofsample_tables,
    AnalysisOptions, BacktestReport, InsampleTables, Orientation, OutsampleTables,
};
use crate::calibration::{CalibrationStore, Setting};
use crate::error::{Error, Result};
use crate::market_data::{synchronize_pair, DatedSeries};
use crate::rng::derive_rng;
use crate::volatility::InnovationSeries;

/// Swap proposals of the ordering search.
pub const ORDERING_PROPOSALS: usize = 50_000;

/// An ordered pair whose backtest could not run; the study continues
/// without it.
#[derive(Clone, Debug, Serialize)]
pub struct PairFailure {
    pub asset_ids: (String, String),
    pub error: String,
}

/// Flags raised by an ordered pair that still produced a report.
#[derive(Clone, Debug, Serialize)]
pub struct PairFlags {
    pub asset_ids: (String, String),
    pub flags: Vec<String>,
}

/// Result of the circular ordering search.
#[derive(Clone, Debug, Serialize)]
pub struct OrderingReport {
    /// Position k of the circle holds asset `permutation[k]` (an index into
    /// the study's asset list).
    pub permutation: Vec<usize>,
    pub objective: f64,
    pub proposals: usize,
}

/// Cross-sectional study over every ordered pair of assets.
#[derive(Clone, Debug, Serialize)]
pub struct CrossSectionReport {
    pub setting: Setting,
    pub asset_ids: Vec<String>,
    /// Ordered pairs attempted: k(k-1).
    pub ordered_pairs: usize,
    /// Ordered pairs that produced a calibrated tile p-value.
    pub evaluated_pairs: usize,
    /// Fitted copula correlations, symmetric; None on the diagonal and for
    /// failed pairs.
    pub rho: Vec<Vec<Option<f64>>>,
    /// ln of the fitted copula degrees of freedom, symmetric.
    pub ln_df: Vec<Vec<Option<f64>>>,
    /// Tile-test p-values; entry [i][j] belongs to the ordered pair whose
    /// transform conditions on asset i, so the matrix is not symmetric.
    pub tile_p: Vec<Vec<Option<f64>>>,
    /// GR-test p-values (in-sample studies only).
    pub gr_p: Option<Vec<Vec<Option<f64>>>>,
    pub tile_rejections_5pct: usize,
    pub gr_rejections_5pct: Option<usize>,
    pub failures: Vec<PairFailure>,
    pub flagged: Vec<PairFlags>,
    pub ordering: OrderingReport,
    pub seed: u64,
    pub options: AnalysisOptions,
}

/// Run the chosen pipeline over every ordered pair of the assets.
///
/// Calibration tables are prepared once, at the configured lengths or at
/// the smallest and largest synchronized pair lengths; individual pair
/// p-values interpolate between them. Pair failures are recorded in the
/// report and the study continues; only a study with no runnable pair at
/// all errors out.
pub fn cross_section(
    assets: &[InnovationSeries],
    setting: Setting,
    options: &AnalysisOptions,
    store: &CalibrationStore,
    seed: u64,
) -> Result<CrossSectionReport> {
    options.validate()?;
    let k = assets.len();
    if k < 3 {
        return Err(Error::Data(format!("cross-section needs at least 3 assets, got {k}")));
    }
    let ids: Vec<String> = assets.iter().map(|a| a.asset_id().to_owned()).collect();
    let mut unique = ids.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != k {
        return Err(Error::Data("cross-section asset identifiers must be distinct".into()));
    }

    // First pass: synchronize each unordered pair, keep the usable ones and
    // record failures for both orientations of the rest.
    let min_len = match setting {
        Setting::InSample => super::MIN_INSAMPLE_LEN,
        Setting::OutOfSample => options.window + super::MIN_OUT_TAIL,
    };
    let mut failures = Vec::new();
    let mut valid: Vec<(usize, usize)> = Vec::new();
    let mut eff_lens: Vec<usize> = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let outcome = match synchronize_pair(&assets[i], &assets[j]) {
                Ok(pair) if pair.len() >= min_len => {
                    let n_eff = match setting {
                        Setting::InSample => pair.len(),
                        Setting::OutOfSample => pair.len() - options.window,
                    };
                    eff_lens.push(n_eff);
                    valid.push((i, j));
                    None
                }
                Ok(pair) => Some(format!(
                    "synchronized overlap {} is below the minimum {min_len}",
                    pair.len()
                )),
                Err(e) => Some(e.to_string()),
            };
            if let Some(msg) = outcome {
                failures.push(PairFailure {
                    asset_ids: (ids[i].clone(), ids[j].clone()),
                    error: msg.clone(),
                });
                failures.push(PairFailure {
                    asset_ids: (ids[j].clone(), ids[i].clone()),
                    error: msg,
                });
            }
        }
    }
    if valid.is_empty() {
        return Err(Error::Data(
            "cross-section: no asset pair reaches the minimum synchronized length".into(),
        ));
    }

    // Tables once, pairs read-only afterwards. Cross-sections always
    // condition on the first-listed asset of each ordered pair.
    let mut run_options = options.clone();
    run_options.orientation = Orientation::ConditionOnFirst;
    if run_options.table_lengths.is_empty() {
        run_options.table_lengths = vec![
            *eff_lens.iter().min().expect("nonempty"),
            *eff_lens.iter().max().expect("nonempty"),
        ];
    }
    let (in_tables, out_tables): (Option<InsampleTables>, Option<OutsampleTables>) = match setting
    {
        Setting::InSample => {
            (Some(prepare_insample_tables(store, 0, &run_options, seed)?), None)
        }
        Setting::OutOfSample => {
            (None, Some(prepare_outofsample_tables(store, 0, &run_options, seed)?))
        }
    };

    // Second pass: both orientations of every usable pair, in parallel.
    // Each pair's random streams are keyed by its asset ids, so the result
    // does not depend on scheduling.
    type PairOutcome = (usize, usize, Result<BacktestReport>, Result<BacktestReport>);
    let outcomes: Vec<PairOutcome> = valid
        .par_iter()
        .map(|&(i, j)| {
            let run = |first: usize, second: usize| -> Result<BacktestReport> {
                let pair = synchronize_pair(&assets[first], &assets[second])?;
                match (&in_tables, &out_tables) {
                    (Some(t), None) => insample_backtest(&pair, &run_options, t, seed),
                    (None, Some(t)) => outofsample_backtest(&pair, &run_options, t, seed),
                    _ => unreachable!("exactly one table set per setting"),
                }
            };
            (i, j, run(i, j), run(j, i))
        })
        .collect();

    let mut rho = vec![vec![None; k]; k];
    let mut ln_df = vec![vec![None; k]; k];
    let mut tile_p = vec![vec![None; k]; k];
    let mut gr_p = (setting == Setting::InSample).then(|| vec![vec![None; k]; k]);
    let mut flagged = Vec::new();
    for (i, j, fwd, rev) in outcomes {
        for (a, b, res) in [(i, j, fwd), (j, i, rev)] {
            match res {
                Ok(report) => {
                    if a < b {
                        // The copula fit is exchange-symmetric; the (i, j)
                        // run fills both triangles.
                        rho[a][b] = Some(report.copula_fit.params.rho);
                        rho[b][a] = rho[a][b];
                        ln_df[a][b] = Some(report.copula_fit.params.nu.ln());
                        ln_df[b][a] = ln_df[a][b];
                    }
                    tile_p[a][b] = report.tile.p_value;
                    if let Some(g) = &mut gr_p {
                        g[a][b] = report.gr.p_value;
                    }
                    if !report.flags.is_empty() {
                        flagged.push(PairFlags {
                            asset_ids: report.asset_ids.clone(),
                            flags: report.flags.clone(),
                        });
                    }
                }
                Err(e) => failures.push(PairFailure {
                    asset_ids: (ids[a].clone(), ids[b].clone()),
                    error: e.to_string(),
                }),
            }
        }
    }

    let count = |m: &[Vec<Option<f64>>]| -> (usize, usize) {
        let mut evaluated = 0;
        let mut rejected = 0;
        for row in m {
            for p in row.iter().flatten() {
                evaluated += 1;
                if *p < 0.05 {
                    rejected += 1;
                }
            }
        }
        (evaluated, rejected)
    };
    let (evaluated_pairs, tile_rejections_5pct) = count(&tile_p);
    let gr_rejections_5pct = gr_p.as_ref().map(|g| count(g).1);

    // Circular layout over |rho|, with unknown correlations treated as 0.
    let dense: Vec<Vec<f64>> =
        rho.iter().map(|row| row.iter().map(|v| v.unwrap_or(0.0)).collect()).collect();
    let ordering = order_assets(&dense, ORDERING_PROPOSALS, seed)?;

    Ok(CrossSectionReport {
        setting,
        asset_ids: ids,
        ordered_pairs: k * (k - 1),
        evaluated_pairs,
        rho,
        ln_df,
        tile_p,
        gr_p,
        tile_rejections_5pct,
        gr_rejections_5pct,
        failures,
        flagged,
        ordering,
        seed,
        options: options.clone(),
    })
}

/// Periodic-distance weights w[a][b] = 1 + ln d(a,b) with d the circular
/// position distance.
fn position_weights(k: usize) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            if a != b {
                let lin = a.abs_diff(b);
                let d = lin.min(k - lin) as f64;
                w[a][b] = 1.0 + d.ln();
            }
        }
    }
    w
}

fn layout_cost(rho: &[Vec<f64>], weights: &[Vec<f64>], perm: &[usize]) -> f64 {
    let k = perm.len();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                total += weights[a][b] * rho[perm[a]][perm[b]].abs();
            }
        }
    }
    total
}

/// Circular layout cost of a permutation: the sum over ordered position
/// pairs of the distance weight times the absolute correlation of the
/// assets placed there. Lower is better: strong correlations belong at
/// small circular distances.
pub fn ordering_objective(rho: &[Vec<f64>], permutation: &[usize]) -> f64 {
    layout_cost(rho, &position_weights(permutation.len()), permutation)
}

fn check_rho_matrix(rho: &[Vec<f64>]) -> Result<()> {
    let k = rho.len();
    if k < 2 {
        return Err(Error::Data(format!("asset ordering needs at least 2 assets, got {k}")));
    }
    for (i, row) in rho.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Data(format!(
                "correlation matrix is not square: row {i} has {} entries for {k} assets",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("correlation [{i}][{j}] is not finite")));
            }
            if (v - rho[j][i]).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "correlation matrix is not symmetric at [{i}][{j}]"
                )));
            }
        }
    }
    Ok(())
}

/// Order assets on a circle by simulated annealing over pairwise swaps, so
/// that strongly correlated assets end up close together. Seeded and fully
/// deterministic.
pub fn order_assets(rho: &[Vec<f64>], proposals: usize, seed: u64) -> Result<OrderingReport> {
    check_rho_matrix(rho)?;
    if proposals == 0 {
        return Err(Error::Config("asset ordering needs at least one proposal".into()));
    }
    let k = rho.len();
    let weights = position_weights(k);

    let mut rng = derive_rng(seed, &["asset-ordering"]);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut cur = layout_cost(rho, &weights, &perm);
    let mut best = perm.clone();
    let mut best_cost = cur;

    // Geometric cooling from the initial per-asset cost scale down four
    // orders of magnitude across the proposal budget.
    let mut t = (cur / k as f64).max(1e-9);
    let factor = 1e-4f64.powf(1.0 / proposals as f64);
    for _ in 0..proposals {
        let a = rng.random_range(0..k);
        let b = rng.random_range(0..k);
        if a != b {
            perm.swap(a, b);
            let cost = layout_cost(rho, &weights, &perm);
            let delta = cost - cur;
            if delta <= 0.0 || rng.random::<f64>() < (-delta / t).exp() {
                cur = cost;
                if cost < best_cost {
                    best_cost = cost;
                    best = perm.clone();
                }
            } else {
                perm.swap(a, b);
            }
        }
        t *= factor;
    }
    Ok(OrderingReport { permutation: best, objective: best_cost, proposals })
}
