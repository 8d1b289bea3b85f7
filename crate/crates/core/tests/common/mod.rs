//! Shared helpers for the integration suites.
//!
//! Every oracle here recomputes its quantity from first principles (direct
//! quadrature, explicit summation, exhaustive enumeration) so the library
//! implementations are checked against independent arithmetic rather than
//! against themselves.

#![allow(dead_code)]

use copback::copula::{copula_density, sample_copula, StudentCopulaParams};
use copback::dist::{student_quantile, StudentMarginalParams};
use copback::market_data::{synthetic_dates, SyncedPair};
use copback::pipelines::{order_assets, ordering_objective};
use copback::rng::derive_rng;
use copback::stat_tests::gr_statistic;
use copback::volatility::LmArchParams;
use rand::Rng;

// ---------------------------------------------------------------------------
// Numerical quadrature

/// Adaptive Simpson integration with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let (l, r) = (0.5 * (a + c), 0.5 * (c + b));
    let (fl, fr) = (f(l), f(r));
    let left = (c - a) / 6.0 * (fa + 4.0 * fl + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fr + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, c, fa, fc, fl, left, 0.5 * tol, depth - 1)
            + simpson_step(f, c, b, fc, fb, fr, right, 0.5 * tol, depth - 1)
    }
}

// ---------------------------------------------------------------------------
// GR statistic: direct grid quadrature of the defining integral

/// Midpoint quadrature of n * integral of (C_n(u,v) - uv)^2 over the unit
/// square on a `cells` x `cells` grid, with C_n the empirical copula of the
/// points. Exact up to the smooth uv part when every data coordinate lies on
/// a cell edge, because C_n is then constant over each cell.
pub fn gr_grid_quadrature(points: &[(f64, f64)], cells: usize) -> f64 {
    let n = points.len() as f64;
    let h = 1.0 / cells as f64;
    let mut total = 0.0;
    for a in 0..cells {
        let u = (a as f64 + 0.5) * h;
        let col: Vec<f64> = points.iter().filter(|p| p.0 <= u).map(|p| p.1).collect();
        for b in 0..cells {
            let v = (b as f64 + 0.5) * h;
            let c = col.iter().filter(|&&y| y <= v).count() as f64 / n;
            let d = c - u * v;
            total += d * d;
        }
    }
    n * total * h * h
}

/// Relative difference between the GR closed form and the grid quadrature
/// on `n` seeded points whose coordinates are snapped onto the cell edges of
/// the quadrature grid (the identity holds for any point set, and snapping
/// lets the grid resolve the empirical-copula steps exactly).
pub fn gr_oracle_rel_diff(n: usize, cells: usize, seed: u64) -> f64 {
    let mut rng = derive_rng(seed, &["oracle", "gr-grid"]);
    let snap = |x: f64| {
        let k = (x * cells as f64).round().clamp(1.0, cells as f64 - 1.0);
        k / cells as f64
    };
    let points: Vec<(f64, f64)> =
        (0..n).map(|_| (snap(rng.random::<f64>()), snap(rng.random::<f64>()))).collect();
    let closed = gr_statistic(&points);
    let grid = gr_grid_quadrature(&points, cells);
    (closed - grid).abs() / grid
}

// ---------------------------------------------------------------------------
// Conditional cdf: quadrature of the copula density

/// P(U2 <= u2 | U1 = u1) under the Student copula, by adaptive quadrature of
/// the copula density in its second argument.
pub fn conditional_cdf_quadrature(u2: f64, u1: f64, params: &StudentCopulaParams) -> f64 {
    // The integrand vanishes at both endpoints (the conditional law has
    // lighter tails than the marginal), so the missing mass below the tiny
    // lower cut is negligible.
    adaptive_simpson(&|v| copula_density((u1, v), params).unwrap(), 1e-13, u2, 1e-10)
}

/// Quadrature of the copula density over the whole second axis; 1 exactly.
pub fn conditional_density_mass(u1: f64, params: &StudentCopulaParams) -> f64 {
    adaptive_simpson(&|v| copula_density((u1, v), params).unwrap(), 1e-13, 1.0 - 1e-13, 1e-10)
}

// ---------------------------------------------------------------------------
// LM-ARCH: explicit lag-weight expansion

/// Volatility forecasts recomputed from the explicit solution of the EWMA
/// recursions: with b the burn-in, init the mean squared return over the
/// first b observations and mu_k = exp(-1/tau_k),
///
///   c_k(t) = mu_k^(t-b) init + (1 - mu_k) sum_{s=b}^{t-1} mu_k^(t-1-s) r_s^2
///   sigma(t) = sqrt(sum_k w_k c_k(t))            for t = b .. n-1.
pub fn lmarch_explicit_sigmas(returns: &[f64], params: &LmArchParams) -> Vec<f64> {
    let b = params.burn_in;
    assert!(returns.len() > b, "oracle needs more than burn_in returns");

    // Characteristic times and weights restated from their definitions.
    let mut taus = vec![params.tau_min];
    let mut tau = params.tau_min;
    while tau < params.tau_max * (1.0 - 1e-9) {
        tau *= params.geometric_factor;
        taus.push(tau);
    }
    let ln_t0 = params.logarithmic_decay_horizon.ln();
    let raw: Vec<f64> = taus.iter().map(|t| 1.0 - t.ln() / ln_t0).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mus: Vec<f64> = taus.iter().map(|t| (-1.0 / t).exp()).collect();

    let init = returns[..b].iter().map(|r| r * r).sum::<f64>() / b as f64;
    (b..returns.len())
        .map(|t| {
            let var: f64 = weights
                .iter()
                .zip(&mus)
                .map(|(w, mu)| {
                    let mut c = mu.powi((t - b) as i32) * init;
                    for (s, r) in returns.iter().enumerate().take(t).skip(b) {
                        c += (1.0 - mu) * mu.powi((t - 1 - s) as i32) * r * r;
                    }
                    w * c
                })
                .sum();
            var.sqrt()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Asset ordering: independent cost and exhaustive search

/// Circular layout cost restated from its definition: sum over ordered
/// position pairs of (1 + ln of the circular position distance) times the
/// absolute correlation of the assets placed there.
pub fn ordering_cost(rho: &[Vec<f64>], perm: &[usize]) -> f64 {
    let k = perm.len();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                let lin = a.abs_diff(b);
                let d = lin.min(k - lin) as f64;
                total += (1.0 + d.ln()) * rho[perm[a]][perm[b]].abs();
            }
        }
    }
    total
}

/// All permutations of 0..k in some fixed order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    permute(&mut items, 0, &mut out);
    out
}

fn permute(items: &mut Vec<usize>, fixed: usize, out: &mut Vec<Vec<usize>>) {
    if fixed == items.len() {
        out.push(items.clone());
        return;
    }
    for i in fixed..items.len() {
        items.swap(fixed, i);
        permute(items, fixed + 1, out);
        items.swap(fixed, i);
    }
}

/// Run `trials` seeded ordering searches on random 6-asset correlation
/// matrices and count how often the annealer hits the exhaustive optimum.
/// Also checks, per trial, that the reported objective matches the
/// independent cost of the reported permutation.
pub fn ordering_trials(trials: usize, seed: u64) -> (usize, usize) {
    let mut hits = 0;
    for trial in 0..trials {
        let mut rng = derive_rng(seed, &["oracle", "ordering", &trial.to_string()]);
        let k = 6;
        let mut rho = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..i {
                let v = rng.random_range(-0.85..0.85);
                rho[i][j] = v;
                rho[j][i] = v;
            }
        }
        let best = permutations(k)
            .iter()
            .map(|p| ordering_cost(&rho, p))
            .fold(f64::INFINITY, f64::min);
        let report = order_assets(&rho, 20_000, seed.wrapping_add(trial as u64)).unwrap();
        let independent = ordering_cost(&rho, &report.permutation);
        assert!(
            (independent - report.objective).abs() <= 1e-9,
            "reported objective {} disagrees with the independent cost {}",
            report.objective,
            independent
        );
        assert!(
            (independent - ordering_objective(&rho, &report.permutation)).abs() <= 1e-9,
            "library objective disagrees with the independent cost"
        );
        if (report.objective - best).abs() <= 1e-9 {
            hits += 1;
        }
    }
    (hits, trials)
}

// ---------------------------------------------------------------------------
// Two-sample Kolmogorov-Smirnov

/// Two-sample KS statistic sup |F_a - F_b|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(f64::total_cmp);
    sb.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Large-sample critical value of the two-sample KS statistic at level
/// `alpha`: c(alpha) * sqrt((n+m)/(n m)) with c from the Kolmogorov law.
pub fn ks_two_sample_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

// ---------------------------------------------------------------------------
// Small-sample statistics

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Ordinary least squares of y on x with the 95% confidence interval of the
/// slope. Supports exactly 5 points (3 residual degrees of freedom).
pub fn ols_slope_ci95(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len(), 5, "the t quantile below is for 3 degrees of freedom");
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let se = (rss / (x.len() - 2) as f64 / sxx).sqrt();
    let t975_df3 = 3.182446305284263;
    (slope, slope - t975_df3 * se, slope + t975_df3 * se)
}

// ---------------------------------------------------------------------------
// Data generation

/// Seeded Student-copula points.
pub fn student_points(rho: f64, nu: f64, n: usize, seed: u64, tags: &[&str]) -> Vec<(f64, f64)> {
    let params = StudentCopulaParams::new(rho, nu).unwrap();
    let mut rng = derive_rng(seed, tags);
    sample_copula(&params, n, &mut rng).points().to_vec()
}

/// Turn unit-square copula points into a synchronized innovation pair by
/// pushing each coordinate through a standard Student quantile.
pub fn pair_from_copula_points(points: &[(f64, f64)], marginal_nu: f64) -> SyncedPair {
    let marginal = StudentMarginalParams::new(marginal_nu, 0.0, 1.0).unwrap();
    let dates = synthetic_dates(points.len());
    let v1: Vec<f64> = points.iter().map(|p| student_quantile(p.0, &marginal).unwrap()).collect();
    let v2: Vec<f64> = points.iter().map(|p| student_quantile(p.1, &marginal).unwrap()).collect();
    SyncedPair::from_columns(("alpha".into(), "beta".into()), dates, v1, v2).unwrap()
}
