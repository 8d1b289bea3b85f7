//! Rosenblatt transforms: the analytic in-sample version using a fitted
//! copula, and the kernel-weighted empirical version used out-of-sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{conditional_cdf, CopulaSample, Provenance, StudentCopulaParams};
use crate::error::{Error, Result};

/// Weight kernel for the empirical conditional cdf.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Gaussian,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    /// Band half-width delta, as a fraction of the probtile axis.
    pub half_width: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { shape: KernelShape::Gaussian, half_width: 0.03 }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width < 0.5) {
            return Err(Error::Config(format!(
                "kernel half width must be in (0, 0.5), got {}",
                self.half_width
            )));
        }
        Ok(())
    }

    /// Weight at signed distance r.
    pub fn weight(&self, r: f64) -> f64 {
        let d = self.half_width;
        match self.shape {
            KernelShape::Gaussian => (-r * r / (2.0 * d * d)).exp(),
            KernelShape::Rectangular => {
                if r.abs() <= d {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Analytic Rosenblatt transform: u1 = z1, u2 = P(z2 | z1) under the given
/// copula. Defined on in-sample probtiles.
pub fn rosenblatt_analytic(
    sample: &CopulaSample,
    params: &StudentCopulaParams,
) -> Result<CopulaSample> {
    if sample.provenance() != Provenance::InCopula {
        return Err(Error::Data(format!(
            "analytic Rosenblatt expects an in-copula sample, got {}",
            sample.provenance().as_str()
        )));
    }
    let mut out = Vec::with_capacity(sample.len());
    for &(z1, z2) in sample.points() {
        let u2 = conditional_cdf(z2, z1, params)?;
        // The conditional cdf of an interior point can round to 0 or 1 in
        // the far tails; keep the output strictly interior.
        let u2 = u2.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        out.push((z1, u2));
    }
    let ids = sample.asset_ids();
    CopulaSample::new(out, Provenance::InTrfCopula, (ids.0.to_owned(), ids.1.to_owned()))
}

/// Kernel-weighted empirical Rosenblatt transform of one target point
/// against a window of probtile points: u1 = z1 and u2 is the weighted
/// fraction of window points with second coordinate <= z2, weighted by
/// kernel distance in the first coordinate.
pub fn rosenblatt_empirical(
    window: &[(f64, f64)],
    target: (f64, f64),
    kernel: &KernelSpec,
) -> Result<(f64, f64)> {
    kernel.validate()?;
    if window.len() < 2 {
        return Err(Error::Data(format!(
            "empirical Rosenblatt needs a window of at least 2 points, got {}",
            window.len()
        )));
    }
    let (z1, z2) = target;
    let mut total = 0.0;
    let mut hit = 0.0;
    for &(w1, w2) in window {
        let w = kernel.weight(w1 - z1);
        total += w;
        if w2 <= z2 {
            hit += w;
        }
    }
    if total <= 0.0 {
        return Err(Error::Computation(format!(
            "empirical Rosenblatt: total kernel weight is zero at z1 = {z1} \
             (rectangular kernel with an empty band)"
        )));
    }
    Ok((z1, hit / total))
}

/// Interior nudge for raw empirical-Rosenblatt outputs: exact 0 and 1 in the
/// second coordinate move to 1/(2(m+1)) and 1 - 1/(2(m+1)). Raw values are
/// what plot data keeps; nudged values feed tests that need interior points.
pub fn nudge_interior(u2: f64, window_len: usize) -> f64 {
    let edge = 1.0 / (2.0 * (window_len as f64 + 1.0));
    if u2 <= 0.0 {
        edge
    } else if u2 >= 1.0 {
        1.0 - edge
    } else {
        u2
    }
}

/// One pass of the rolling out-of-sample transform.
///
/// For each point after the first `window_len`, against the trailing window
/// of raw pairs:
///   1. probtile each coordinate with the randomized empirical cdf of the
///      window column (first coordinate drawn first);
///   2. convert the window itself to pseudo-observations per column;
///   3. empirical-Rosenblatt the probtiled point against the window
///      probtiles.
/// The window then slides forward by one. Outputs are raw: the second
/// Rosenblatt coordinate can be exactly 0 or 1 and is left un-nudged.
#[derive(Clone, Debug)]
pub struct RollingOutput {
    /// Probtiles (z1, z2) of each post-window point, strictly interior.
    pub out_copula: Vec<(f64, f64)>,
    /// Empirical Rosenblatt pairs (z1, u2_raw) of the same points.
    pub out_trf: Vec<(f64, f64)>,
}

pub fn rolling_out_of_sample<R: Rng + ?Sized>(
    pairs: &[(f64, f64)],
    window_len: usize,
    kernel: &KernelSpec,
    rng: &mut R,
) -> Result<RollingOutput> {
    kernel.validate()?;
    let m = window_len;
    if m < 2 {
        return Err(Error::Config(format!("rolling window must hold at least 2 points, got {m}")));
    }
    if pairs.len() <= m {
        return Err(Error::Data(format!(
            "rolling transform needs more points than the window: {} <= {m}",
            pairs.len()
        )));
    }

    let steps = pairs.len() - m;
    let mut out_copula = Vec::with_capacity(steps);
    let mut out_trf = Vec::with_capacity(steps);

    // Scratch reused across steps; semantics per step match the one-shot
    // helpers in dist (same draw order: z1, z2, then column ranks 1, 2).
    let mut col1 = vec![0.0; m];
    let mut col2 = vec![0.0; m];
    let mut u1 = vec![0.0; m];
    let mut u2 = vec![0.0; m];
    let mut idx = vec![0usize; m];
    let mut win_u = vec![(0.0, 0.0); m];

    for t in m..pairs.len() {
        let window = &pairs[t - m..t];
        for (j, &(a, b)) in window.iter().enumerate() {
            col1[j] = a;
            col2[j] = b;
        }
        let (x1, x2) = pairs[t];
        let z1 = probtile_scan(&col1, x1, rng);
        let z2 = probtile_scan(&col2, x2, rng);

        crate::dist::pseudo_observations_into(&col1, rng, &mut idx, &mut u1);
        crate::dist::pseudo_observations_into(&col2, rng, &mut idx, &mut u2);
        for (slot, (&a, &b)) in win_u.iter_mut().zip(u1.iter().zip(u2.iter())) {
            *slot = (a, b);
        }

        let (_, r2) = rosenblatt_empirical(&win_u, (z1, z2), kernel)?;
        out_copula.push((z1, z2));
        out_trf.push((z1, r2));
    }
    Ok(RollingOutput { out_copula, out_trf })
}

/// Randomized probtile of `x` against an unsorted window, by linear count.
fn probtile_scan<R: Rng + ?Sized>(window: &[f64], x: f64, rng: &mut R) -> f64 {
    let mut below = 0usize;
    let mut equal = 0usize;
    for &w in window {
        if w < x {
            below += 1;
        } else if w == x {
            equal += 1;
        }
    }
    crate::dist::randomized_probtile_from_counts(below, equal, window.len(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::sample_copula;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_weights() {
        let g = KernelSpec { shape: KernelShape::Gaussian, half_width: 0.03 };
        assert_eq!(g.weight(0.0), 1.0);
        assert_abs_diff_eq!(g.weight(0.03), (-0.5f64).exp(), epsilon = 1e-15);
        let r = KernelSpec { shape: KernelShape::Rectangular, half_width: 0.03 };
        assert_eq!(r.weight(0.029), 1.0);
        assert_eq!(r.weight(0.031), 0.0);
        assert!(KernelSpec { shape: KernelShape::Gaussian, half_width: 0.6 }.validate().is_err());
    }

    #[test]
    fn analytic_identity_in_independence_limit() {
        let mut rng = derive_rng(21, &["trf-indep"]);
        let near_indep = StudentCopulaParams::new(0.0, 1e6).unwrap();
        let sample = sample_copula(&near_indep, 500, &mut rng);
        let out = rosenblatt_analytic(&sample, &near_indep).unwrap();
        assert_eq!(out.provenance(), crate::copula::Provenance::InTrfCopula);
        for (inp, outp) in sample.points().iter().zip(out.points()) {
            assert_eq!(inp.0, outp.0);
            assert!((inp.1 - outp.1).abs() < 1e-4);
        }
    }

    #[test]
    fn empirical_hand_computation() {
        // Window (0.2,0.3), (0.5,0.9), (0.8,0.1); target (0.2, 0.5);
        // Gaussian delta = 0.03. Weights are 1, e^-50, e^-200; only the
        // first window point is at or below z2 = 0.5.
        let window = [(0.2, 0.3), (0.5, 0.9), (0.8, 0.1)];
        let kernel = KernelSpec { shape: KernelShape::Gaussian, half_width: 0.03 };
        let (u1, u2) = rosenblatt_empirical(&window, (0.2, 0.5), &kernel).unwrap();
        assert_eq!(u1, 0.2);
        let w2 = (-50.0f64).exp();
        let w3 = (-200.0f64).exp();
        let expected = (1.0 + w3) / (1.0 + w2 + w3);
        assert!((u2 - expected).abs() < 1e-12);
        assert!((u2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empirical_saturates_at_one() {
        let window = [(0.4, 0.2), (0.5, 0.6), (0.6, 0.4)];
        let kernel = KernelSpec::default();
        let (_, u2) = rosenblatt_empirical(&window, (0.5, 0.99), &kernel).unwrap();
        assert_eq!(u2, 1.0);
        let (_, lo) = rosenblatt_empirical(&window, (0.5, 0.01), &kernel).unwrap();
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn empirical_monotone_in_z2() {
        let mut rng = derive_rng(22, &["trf-monotone"]);
        let window: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let kernel = KernelSpec::default();
        let mut prev = -1.0;
        for k in 0..=50 {
            let z2 = 0.01 + 0.98 * k as f64 / 50.0;
            let (_, u2) = rosenblatt_empirical(&window, (0.3, z2), &kernel).unwrap();
            assert!(u2 >= prev);
            prev = u2;
        }
    }

    #[test]
    fn rectangular_zero_band_errors() {
        let window = [(0.1, 0.2), (0.9, 0.8)];
        let kernel = KernelSpec { shape: KernelShape::Rectangular, half_width: 0.03 };
        assert!(rosenblatt_empirical(&window, (0.5, 0.5), &kernel).is_err());
    }

    #[test]
    fn nudge_boundaries_only() {
        assert_eq!(nudge_interior(0.0, 500), 1.0 / 1002.0);
        assert_eq!(nudge_interior(1.0, 500), 1.0 - 1.0 / 1002.0);
        assert_eq!(nudge_interior(0.37, 500), 0.37);
    }

    #[test]
    fn analytic_requires_in_copula_provenance() {
        let mut rng = derive_rng(23, &["trf-prov"]);
        let p = StudentCopulaParams::new(0.5, 5.0).unwrap();
        let sample = sample_copula(&p, 200, &mut rng);
        let transformed = rosenblatt_analytic(&sample, &p).unwrap();
        assert!(rosenblatt_analytic(&transformed, &p).is_err());
    }

    #[test]
    fn rolling_matches_one_shot_helpers() {
        use crate::dist::{empirical_cdf_randomized, pseudo_observations, EmpiricalCdf};

        let mut gen = derive_rng(24, &["trf-roll-data"]);
        let pairs: Vec<(f64, f64)> = (0..40)
            .map(|_| (gen.random::<f64>() * 4.0 - 2.0, gen.random::<f64>() * 4.0 - 2.0))
            .collect();
        let m = 8;
        let kernel = KernelSpec::default();

        let mut rng = derive_rng(24, &["trf-roll"]);
        let fast = rolling_out_of_sample(&pairs, m, &kernel, &mut rng).unwrap();

        let mut rng = derive_rng(24, &["trf-roll"]);
        let mut slow_copula = Vec::new();
        let mut slow_trf = Vec::new();
        for t in m..pairs.len() {
            let window = &pairs[t - m..t];
            let c1: Vec<f64> = window.iter().map(|p| p.0).collect();
            let c2: Vec<f64> = window.iter().map(|p| p.1).collect();
            let z1 = empirical_cdf_randomized(&EmpiricalCdf::new(&c1).unwrap(), pairs[t].0, &mut rng);
            let z2 = empirical_cdf_randomized(&EmpiricalCdf::new(&c2).unwrap(), pairs[t].1, &mut rng);
            let u1 = pseudo_observations(&c1, &mut rng);
            let u2 = pseudo_observations(&c2, &mut rng);
            let win_u: Vec<(f64, f64)> = u1.into_iter().zip(u2).collect();
            let (r1, r2) = rosenblatt_empirical(&win_u, (z1, z2), &kernel).unwrap();
            slow_copula.push((z1, z2));
            slow_trf.push((r1, r2));
        }
        assert_eq!(fast.out_copula, slow_copula);
        assert_eq!(fast.out_trf, slow_trf);
    }

    #[test]
    fn rolling_shapes_and_ranges() {
        let mut gen = derive_rng(25, &["trf-roll-shape"]);
        let pairs: Vec<(f64, f64)> =
            (0..300).map(|_| (gen.random::<f64>(), gen.random::<f64>())).collect();
        let mut rng = derive_rng(25, &["trf-roll-shape-run"]);
        let out = rolling_out_of_sample(&pairs, 100, &KernelSpec::default(), &mut rng).unwrap();
        assert_eq!(out.out_copula.len(), 200);
        assert_eq!(out.out_trf.len(), 200);
        for &(z1, z2) in &out.out_copula {
            assert!(z1 > 0.0 && z1 < 1.0 && z2 > 0.0 && z2 < 1.0);
        }
        for &(u1, u2) in &out.out_trf {
            assert!(u1 > 0.0 && u1 < 1.0);
            assert!((0.0..=1.0).contains(&u2));
        }
    }

    #[test]
    fn rolling_saturates_on_increasing_input() {
        // Strictly increasing input: every new point is the window maximum in
        // both coordinates, so the raw Rosenblatt coordinate is exactly 1 and
        // the probtile sits in the top randomized slot.
        let pairs: Vec<(f64, f64)> = (0..30).map(|k| (k as f64, 2.0 * k as f64)).collect();
        let m = 10;
        let mut rng = derive_rng(26, &["trf-roll-mono"]);
        let out = rolling_out_of_sample(&pairs, m, &KernelSpec::default(), &mut rng).unwrap();
        let lo = m as f64 / (m as f64 + 1.0);
        for (&(z1, z2), &(_, u2)) in out.out_copula.iter().zip(&out.out_trf) {
            assert!(z1 > lo && z1 < 1.0);
            assert!(z2 > lo && z2 < 1.0);
            assert_eq!(u2, 1.0);
        }
    }

    #[test]
    fn rolling_input_validation() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, k as f64)).collect();
        let kernel = KernelSpec::default();
        let mut rng = derive_rng(27, &["trf-roll-err"]);
        assert!(rolling_out_of_sample(&pairs, 10, &kernel, &mut rng).is_err());
        assert!(rolling_out_of_sample(&pairs, 1, &kernel, &mut rng).is_err());
    }
}
