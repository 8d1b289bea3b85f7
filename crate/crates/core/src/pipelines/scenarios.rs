//! Scenario generation and risk measures: one-day-ahead bivariate return
//! scenarios from the latest volatility forecasts and a window of past
//! innovations, and empirical VaR / expected shortfall over a loss sample.

use serde::{Deserialize, Serialize};

use crate::dist::quantile_type7;
use crate::error::{Error, Result};
use crate::market_data::{Date, SyncedPair};

/// One-day-ahead return scenarios for a pair of assets. Scenario i applies
/// the synchronized innovations observed i days before the forecast origin
/// to today's volatility forecasts, so index 0 is the most recent day.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSet {
    pub asset_ids: (String, String),
    /// Date of the last innovation the scenarios stand on; they forecast
    /// the next trading day.
    pub origin_date: Date,
    pub horizon_days: usize,
    /// Volatility forecasts the innovations were scaled by.
    pub sigmas: (f64, f64),
    pub scenarios: Vec<(f64, f64)>,
}

/// Build `window` scenarios r_i = sigma * eps(t - i) from the tail of a
/// synchronized innovation pair. Scenario indices stay synchronized across
/// the two assets: both coordinates of scenario i come from the same date.
pub fn generate_scenarios(
    pair: &SyncedPair,
    sigmas: (f64, f64),
    window: usize,
) -> Result<ScenarioSet> {
    if window == 0 {
        return Err(Error::Config("scenario window must be positive".into()));
    }
    for s in [sigmas.0, sigmas.1] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Data(format!("volatility forecast must be positive, got {s}")));
        }
    }
    let n = pair.len();
    if n < window {
        return Err(Error::Data(format!(
            "scenario window {window} exceeds the {n} synchronized innovations"
        )));
    }
    let v1 = &pair.values_1()[n - window..];
    let v2 = &pair.values_2()[n - window..];
    let scenarios = (0..window)
        .map(|i| {
            let k = window - 1 - i;
            (sigmas.0 * v1[k], sigmas.1 * v2[k])
        })
        .collect();
    let (id1, id2) = pair.asset_ids();
    Ok(ScenarioSet {
        asset_ids: (id1.to_owned(), id2.to_owned()),
        origin_date: pair.dates()[n - 1].clone(),
        horizon_days: 1,
        sigmas,
        scenarios,
    })
}

/// Empirical value-at-risk and expected shortfall of a loss sample.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RiskMeasures {
    pub alpha: f64,
    /// The alpha-quantile of the losses (linear interpolation of order
    /// statistics).
    pub var: f64,
    /// Mean loss strictly beyond the VaR; equals the VaR when no loss
    /// exceeds it.
    pub es: f64,
    /// Number of losses beyond the VaR.
    pub tail_count: usize,
}

pub fn risk_measures(losses: &[f64], alpha: f64) -> Result<RiskMeasures> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("confidence level must be in (0,1), got {alpha}")));
    }
    if losses.is_empty() {
        return Err(Error::Data("risk measures need a nonempty loss sample".into()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Data("loss sample contains non-finite values".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let var = quantile_type7(&sorted, alpha)?;
    let tail_start = sorted.partition_point(|&l| l <= var);
    let tail = &sorted[tail_start..];
    let es = if tail.is_empty() {
        var
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    Ok(RiskMeasures { alpha, var, es, tail_count: tail.len() })
}
