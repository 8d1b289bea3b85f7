//! LM-ARCH one-step volatility forecast and innovation computation.
//!
//! The forecast variance is a weighted sum of exponentially weighted moving
//! averages of squared returns over a geometric ladder of characteristic
//! times, with weights decaying logarithmically. Returns are treated as
//! zero-mean throughout (the daily drift is negligible at this horizon).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{dated_series, Date, DatedSeries, ReturnSeries};

/// Parameters of the LM-ARCH volatility filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmArchParams {
    /// Shortest characteristic time, in days.
    pub tau_min: f64,
    /// The ladder stops at the first characteristic time >= tau_max.
    pub tau_max: f64,
    /// Ratio between consecutive characteristic times (> 1).
    pub geometric_factor: f64,
    /// Horizon tau_0 of the logarithmic weight decay; must exceed every
    /// characteristic time so all weights stay positive.
    pub logarithmic_decay_horizon: f64,
    /// Number of leading returns used to initialize the EWMAs; the forecast
    /// series starts at this index of the return series.
    pub burn_in: usize,
}

impl Default for LmArchParams {
    fn default() -> Self {
        LmArchParams {
            tau_min: 4.0,
            tau_max: 512.0,
            geometric_factor: std::f64::consts::SQRT_2,
            logarithmic_decay_horizon: 1560.0,
            burn_in: 250,
        }
    }
}

impl LmArchParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.tau_min.is_finite()
            && self.tau_max.is_finite()
            && self.geometric_factor.is_finite()
            && self.logarithmic_decay_horizon.is_finite();
        if !all_finite {
            return Err(Error::Config("volatility parameters must be finite".into()));
        }
        if self.tau_min < 1.0 {
            return Err(Error::Config(format!("tau_min must be >= 1, got {}", self.tau_min)));
        }
        if self.tau_max < self.tau_min {
            return Err(Error::Config(format!(
                "tau_max {} must be >= tau_min {}",
                self.tau_max, self.tau_min
            )));
        }
        if self.geometric_factor <= 1.0 {
            return Err(Error::Config(format!(
                "geometric_factor must be > 1, got {}",
                self.geometric_factor
            )));
        }
        if self.logarithmic_decay_horizon <= self.tau_max {
            return Err(Error::Config(format!(
                "logarithmic_decay_horizon {} must exceed tau_max {}",
                self.logarithmic_decay_horizon, self.tau_max
            )));
        }
        if (self.burn_in as f64) < self.tau_min {
            return Err(Error::Config(format!(
                "burn_in {} must be >= tau_min {}",
                self.burn_in, self.tau_min
            )));
        }
        let last = *self.component_horizons().last().unwrap();
        if last >= self.logarithmic_decay_horizon {
            return Err(Error::Config(format!(
                "largest characteristic time {last} reaches the decay horizon {}; \
                 increase logarithmic_decay_horizon",
                self.logarithmic_decay_horizon
            )));
        }
        Ok(())
    }

    /// Characteristic times tau_k = tau_min * geometric_factor^(k-1), up to
    /// the first one reaching tau_max (with a tolerance so that exact powers
    /// are not missed to rounding).
    pub fn component_horizons(&self) -> Vec<f64> {
        let mut taus = vec![self.tau_min];
        let mut tau = self.tau_min;
        while tau < self.tau_max * (1.0 - 1e-9) {
            tau *= self.geometric_factor;
            taus.push(tau);
        }
        taus
    }

    pub fn component_count(&self) -> usize {
        self.component_horizons().len()
    }

    /// Weights w_k proportional to 1 - ln(tau_k)/ln(tau_0), normalized to
    /// sum to 1. All positive for valid parameters.
    pub fn component_weights(&self) -> Vec<f64> {
        let ln_tau0 = self.logarithmic_decay_horizon.ln();
        let raw: Vec<f64> = self
            .component_horizons()
            .iter()
            .map(|t| 1.0 - t.ln() / ln_tau0)
            .collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

dated_series!(
    /// One-step-ahead daily volatility forecasts. The value dated t is built
    /// from returns strictly before t and forecasts the return at t.
    VolatilitySeries,
    1,
    |s| s.is_finite() && s > 0.0
);

dated_series!(
    /// Realized innovations, epsilon(t) = r(t) / sigma(t).
    InnovationSeries,
    1,
    |e| e.is_finite()
);

/// Run the LM-ARCH filter over a return series. The output holds one value
/// per return from index `burn_in` on; each value is the forecast for its
/// own date (no look-ahead: the return of that date is not yet included).
pub fn lmarch_forecast(returns: &ReturnSeries, params: &LmArchParams) -> Result<VolatilitySeries> {
    params.validate()?;
    let obs = returns.observations();
    let n = obs.len();
    let b = params.burn_in;
    if n <= b {
        return Err(Error::Data(format!(
            "{}: need more than burn_in = {b} returns, got {n}",
            returns.asset_id()
        )));
    }

    // Zero-mean convention: the initial variance is the mean squared return
    // over the burn-in window.
    let init: f64 = obs[..b].iter().map(|(_, r)| r * r).sum::<f64>() / b as f64;
    if init == 0.0 {
        return Err(Error::Data(format!(
            "{}: all-zero returns in the initialization window",
            returns.asset_id()
        )));
    }

    let mus: Vec<f64> = params
        .component_horizons()
        .iter()
        .map(|tau| (-1.0 / tau).exp())
        .collect();
    let weights = params.component_weights();
    let mut components = vec![init; mus.len()];

    let mut out = Vec::with_capacity(n - b);
    for (date, r) in &obs[b..] {
        let var: f64 = weights
            .iter()
            .zip(&components)
            .map(|(w, c)| w * c)
            .sum();
        out.push((date.clone(), var.sqrt()));
        let r2 = r * r;
        for (c, mu) in components.iter_mut().zip(&mus) {
            *c = mu * *c + (1.0 - mu) * r2;
        }
    }
    VolatilitySeries::new(returns.asset_id(), out)
}

/// Divide each return by the volatility forecast of the same date. Every
/// volatility date must carry a return; extra returns (e.g. the burn-in
/// head) are skipped.
pub fn compute_innovations(
    returns: &ReturnSeries,
    vol: &VolatilitySeries,
) -> Result<InnovationSeries> {
    let ret = returns.observations();
    let mut by_date = ret.iter().peekable();
    let mut out = Vec::with_capacity(vol.len());
    for (date, sigma) in vol.observations() {
        while let Some((d, _)) = by_date.peek() {
            if d < date {
                by_date.next();
            } else {
                break;
            }
        }
        match by_date.peek() {
            Some((d, r)) if d == date => {
                if *sigma <= 0.0 || !sigma.is_finite() {
                    return Err(Error::Data(format!(
                        "{}: non-positive volatility at {date}",
                        vol.asset_id()
                    )));
                }
                out.push((date.clone(), r / sigma));
            }
            _ => {
                return Err(Error::Data(format!(
                    "{}: no return for volatility date {date}",
                    vol.asset_id()
                )));
            }
        }
    }
    InnovationSeries::new(returns.asset_id(), out)
}

/// Convenience: full r -> sigma -> epsilon chain for one asset.
pub fn innovations_from_returns(
    returns: &ReturnSeries,
    params: &LmArchParams,
) -> Result<(VolatilitySeries, InnovationSeries)> {
    let vol = lmarch_forecast(returns, params)?;
    let eps = compute_innovations(returns, &vol)?;
    Ok((vol, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dates(n: usize) -> Vec<Date> {
        // Synthetic strictly increasing labels; calendar meaning irrelevant.
        (0..n)
            .map(|i| {
                Date::parse(&format!(
                    "{:04}-{:02}-{:02}",
                    2000 + i / 372,
                    1 + (i / 31) % 12,
                    1 + i % 31
                ))
                .unwrap()
            })
            .collect()
    }

    fn return_series(values: &[f64]) -> ReturnSeries {
        ReturnSeries::new(
            "X",
            dates(values.len()).into_iter().zip(values.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_ladder_has_15_components_ending_at_512() {
        let p = LmArchParams::default();
        p.validate().unwrap();
        let taus = p.component_horizons();
        assert_eq!(taus.len(), 15);
        assert_abs_diff_eq!(taus[0], 4.0, epsilon = 0.0);
        assert_abs_diff_eq!(*taus.last().unwrap(), 512.0, epsilon = 1e-9);
        let w = p.component_weights();
        assert!(w.iter().all(|&x| x > 0.0));
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // Shorter characteristic times carry larger weights.
        assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let ok = LmArchParams::default();
        for bad in [
            LmArchParams { tau_min: 0.5, ..ok },
            LmArchParams { geometric_factor: 1.0, ..ok },
            LmArchParams { tau_max: 2.0, ..ok },
            LmArchParams { logarithmic_decay_horizon: 500.0, ..ok },
            LmArchParams { burn_in: 2, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn output_length_and_alignment() {
        let r = return_series(&vec![0.01; 1000]);
        let v = lmarch_forecast(&r, &LmArchParams::default()).unwrap();
        assert_eq!(v.len(), 750);
        assert_eq!(v.observations()[0].0, r.observations()[250].0);
        let eps = compute_innovations(&r, &v).unwrap();
        assert_eq!(eps.len(), 750);
    }

    #[test]
    fn alternating_returns_converge_to_c() {
        let c = 0.02;
        let vals: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { c } else { -c }).collect();
        let r = return_series(&vals);
        let v = lmarch_forecast(&r, &LmArchParams::default()).unwrap();
        // Squared returns are constant, so every EWMA sits at c^2 exactly.
        for (_, s) in v.observations() {
            assert_abs_diff_eq!(*s, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_tail_decays_monotonically() {
        let mut vals = vec![0.01; 300];
        vals.extend(std::iter::repeat(0.0).take(500));
        let r = return_series(&vals);
        let v = lmarch_forecast(&r, &LmArchParams::default()).unwrap();
        let sig: Vec<f64> = v.observations().iter().map(|(_, s)| *s).collect();
        // After the nonzero head has passed, sigma decreases toward 0.
        for w in sig[60..].windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(*sig.last().unwrap() < 0.5 * sig[60]);
    }

    #[test]
    fn scale_equivariance() {
        let vals: Vec<f64> = (0..600)
            .map(|i| 0.01 * ((i as f64 * 0.7).sin() + 0.3 * (i as f64 * 0.13).cos()))
            .collect();
        let r1 = return_series(&vals);
        let r2 = return_series(&vals.iter().map(|v| 3.5 * v).collect::<Vec<_>>());
        let p = LmArchParams::default();
        let v1 = lmarch_forecast(&r1, &p).unwrap();
        let v2 = lmarch_forecast(&r2, &p).unwrap();
        for ((_, a), (_, b)) in v1.observations().iter().zip(v2.observations()) {
            assert_abs_diff_eq!(3.5 * a, *b, epsilon = 1e-14);
        }
        let e1 = compute_innovations(&r1, &v1).unwrap();
        let e2 = compute_innovations(&r2, &v2).unwrap();
        for ((_, a), (_, b)) in e1.observations().iter().zip(e2.observations()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_look_ahead() {
        let vals: Vec<f64> = (0..400).map(|i| 0.01 * ((i * i % 17) as f64 - 8.0) / 8.0).collect();
        let p = LmArchParams { burn_in: 100, ..LmArchParams::default() };
        let base = lmarch_forecast(&return_series(&vals), &p).unwrap();
        // Perturb the return at index 300; forecasts up to and including
        // index 300 must not move (the value dated t excludes r(t)).
        let mut bumped = vals.clone();
        bumped[300] += 0.05;
        let pert = lmarch_forecast(&return_series(&bumped), &p).unwrap();
        for i in 0..=200 {
            assert_eq!(base.observations()[i].1, pert.observations()[i].1);
        }
        assert_ne!(base.observations()[201].1, pert.observations()[201].1);
    }

    #[test]
    fn innovation_definition() {
        let vals = vec![0.01; 400];
        let r = return_series(&vals);
        let p = LmArchParams { burn_in: 100, ..LmArchParams::default() };
        let v = lmarch_forecast(&r, &p).unwrap();
        let eps = compute_innovations(&r, &v).unwrap();
        // Constant returns: sigma equals the return, so epsilon = 1.
        for (_, e) in eps.observations() {
            assert_abs_diff_eq!(*e, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_return_maps_to_zero_innovation() {
        let mut vals = vec![0.01; 400];
        vals[399] = 0.0;
        let r = return_series(&vals);
        let p = LmArchParams { burn_in: 100, ..LmArchParams::default() };
        let v = lmarch_forecast(&r, &p).unwrap();
        let eps = compute_innovations(&r, &v).unwrap();
        assert_eq!(eps.observations().last().unwrap().1, 0.0);
    }

    #[test]
    fn all_zero_initialization_window_errors() {
        let mut vals = vec![0.0; 300];
        vals[280] = 0.01;
        let r = return_series(&vals);
        assert!(lmarch_forecast(&r, &LmArchParams::default()).is_err());
    }

    #[test]
    fn too_short_series_errors() {
        let r = return_series(&vec![0.01; 250]);
        assert!(lmarch_forecast(&r, &LmArchParams::default()).is_err());
    }
}
