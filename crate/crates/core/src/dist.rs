//! Univariate distributions: Student t (pdf/cdf/quantile/fit), empirical
//! cdfs with randomized tie-breaking, and classical dependence measures.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;
#[cfg(test)]
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::market_data::SyncedPair;
use crate::optim;

/// Location-scale Student t parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StudentMarginalParams {
    pub nu: f64,
    pub location: f64,
    pub scale: f64,
}

impl StudentMarginalParams {
    pub fn new(nu: f64, location: f64, scale: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Data(format!("degrees of freedom must be positive, got {nu}")));
        }
        if !location.is_finite() {
            return Err(Error::Data(format!("location must be finite, got {location}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Data(format!("scale must be positive, got {scale}")));
        }
        Ok(StudentMarginalParams { nu, location, scale })
    }
}

// --- standard (location 0, scale 1) Student t ---

pub(crate) fn std_t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub(crate) fn std_t_pdf(x: f64, nu: f64) -> f64 {
    std_t_ln_pdf(x, nu).exp()
}

pub(crate) fn std_t_cdf(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    // One-tail mass via the regularized incomplete beta; exact symmetry.
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of the standard Student t: safeguarded Newton on the cdf,
/// seeded from the normal quantile (an optional caller seed accelerates
/// batches of nearby probabilities).
pub(crate) fn std_t_quantile_seeded(p: f64, nu: f64, seed: Option<f64>) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p == 0.5 {
        return 0.0;
    }

    let mut x = match seed {
        Some(s) if s.is_finite() => s,
        _ => {
            let z = normal_quantile(p);
            if nu > 2.5 {
                z * (nu / (nu - 2.0)).sqrt()
            } else {
                // Heavy-tail seed; the bracket search below corrects it.
                let c = (std::f64::consts::PI * (p - 0.5)).tan();
                if c.abs() > z.abs() {
                    c
                } else {
                    z
                }
            }
        }
    };
    if !x.is_finite() {
        x = 0.0;
    }

    // Establish a bracket [lo, hi] with cdf(lo) <= p <= cdf(hi).
    let (mut lo, mut hi);
    if std_t_cdf(x, nu) >= p {
        hi = x;
        lo = x - 1.0;
        let mut step = 1.0;
        while std_t_cdf(lo, nu) > p {
            hi = lo;
            step *= 4.0;
            lo -= step;
        }
    } else {
        lo = x;
        hi = x + 1.0;
        let mut step = 1.0;
        while std_t_cdf(hi, nu) < p {
            lo = hi;
            step *= 4.0;
            hi += step;
        }
    }

    x = x.clamp(lo, hi);
    for _ in 0..120 {
        let r = std_t_cdf(x, nu) - p;
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let deriv = std_t_pdf(x, nu);
        let mut next = x - r / deriv;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-13 * (1.0 + x.abs()) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

pub(crate) fn std_t_quantile(p: f64, nu: f64) -> f64 {
    std_t_quantile_seeded(p, nu, None)
}

// --- normal helpers (seeding and diagnostics) ---

#[cfg(test)]
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

// --- public location-scale interface ---

pub fn student_pdf(x: f64, params: &StudentMarginalParams) -> f64 {
    std_t_pdf((x - params.location) / params.scale, params.nu) / params.scale
}

pub fn student_cdf(x: f64, params: &StudentMarginalParams) -> f64 {
    std_t_cdf((x - params.location) / params.scale, params.nu)
}

pub fn student_quantile(p: f64, params: &StudentMarginalParams) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Data(format!("quantile probability must be in (0,1), got {p}")));
    }
    Ok(params.location + params.scale * std_t_quantile(p, params.nu))
}

/// Outcome of the marginal maximum-likelihood fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudentMarginalFit {
    pub params: StudentMarginalParams,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Maximum-likelihood Student fit over (nu, location, scale). The optimizer
/// works on (location, ln scale, ln nu) and must reach a mean-log-likelihood
/// gradient norm below 1e-6.
pub fn fit_student_marginal(sample: &[f64]) -> Result<StudentMarginalFit> {
    let n = sample.len();
    if n < 50 {
        return Err(Error::Data(format!("marginal fit needs at least 50 points, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("marginal fit sample contains non-finite values".into()));
    }
    let first = sample[0];
    if sample.iter().all(|&v| v == first) {
        return Err(Error::Data("degenerate sample: all values equal".into()));
    }

    let mean = sample.iter().sum::<f64>() / n as f64;
    let med = median(sample);
    let mad = median(&sample.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
    // 0.6745 is the MAD-to-sigma factor of the normal; good enough as a seed.
    let scale0 = (mad / 0.6745).max(1e-12);

    let inv_n = 1.0 / n as f64;
    let neg_mean_loglik = |theta: &[f64]| -> (f64, Vec<f64>) {
        let (loc, ln_s, ln_nu) = (theta[0], theta[1], theta[2]);
        let s = ln_s.exp();
        let nu = ln_nu.exp();
        if !s.is_finite() || !nu.is_finite() || s <= 0.0 || nu <= 0.0 {
            return (f64::INFINITY, vec![0.0; 3]);
        }
        let const_part = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - ln_s;
        let dig = 0.5 * (digamma((nu + 1.0) / 2.0) - digamma(nu / 2.0)) - 0.5 / nu;
        let mut sum_l = 0.0;
        let mut g_loc = 0.0;
        let mut g_lns = 0.0;
        let mut g_lnnu = 0.0;
        for &v in sample {
            let z = (v - loc) / s;
            let z2 = z * z;
            let denom = nu + z2;
            sum_l += const_part - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p();
            g_loc += (nu + 1.0) * z / (denom * s);
            g_lns += -1.0 + (nu + 1.0) * z2 / denom;
            g_lnnu += nu * (dig - 0.5 * (z2 / nu).ln_1p() + 0.5 * (nu + 1.0) * z2 / (nu * denom));
        }
        (
            -sum_l * inv_n,
            vec![-g_loc * inv_n, -g_lns * inv_n, -g_lnnu * inv_n],
        )
    };

    let x0 = [mean, scale0.ln(), 6.0f64.ln()];
    let r = optim::bfgs(neg_mean_loglik, &x0, 1e-6, 500);
    if !r.converged {
        return Err(Error::Computation(format!(
            "marginal fit did not converge: gradient norm {:.3e} after {} iterations \
             at location {:.6}, scale {:.6}, nu {:.6}",
            r.grad_norm,
            r.iterations,
            r.x[0],
            r.x[1].exp(),
            r.x[2].exp(),
        )));
    }
    Ok(StudentMarginalFit {
        params: StudentMarginalParams::new(r.x[2].exp(), r.x[0], r.x[1].exp())?,
        log_likelihood: -r.f * n as f64,
        gradient_norm: r.grad_norm,
        iterations: r.iterations,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Empirical distribution of a sample, stored sorted.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::Data("empirical cdf needs at least one value".into()));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("empirical cdf sample contains non-finite values".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Step value `#{<= x}/n` (the plot-data convention).
    pub fn value(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.n() as f64
    }

    /// `(#{< x}, #{= x})`.
    pub fn counts(&self, x: f64) -> (usize, usize) {
        let below = self.sorted.partition_point(|&v| v < x);
        let below_eq = self.sorted.partition_point(|&v| v <= x);
        (below, below_eq - below)
    }
}

/// Tie-broken probability transform: with `k = #{< x}` and `e = #{= x}`,
/// returns `(k + U (e + 1)) / (n + 1)` with `U` uniform on (0,1). Always
/// strictly inside (0,1).
pub fn empirical_cdf_randomized<R: Rng + ?Sized>(cdf: &EmpiricalCdf, x: f64, rng: &mut R) -> f64 {
    let (k, e) = cdf.counts(x);
    randomized_probtile_from_counts(k, e, cdf.n(), rng)
}

/// Type-7 sample quantile (linear interpolation between order statistics,
/// the R default) of an ascending-sorted sample.
pub fn quantile_type7(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Data("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Data(format!("quantile level must be in [0, 1], got {p}")));
    }
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub(crate) fn randomized_probtile_from_counts<R: Rng + ?Sized>(
    k: usize,
    e: usize,
    n: usize,
    rng: &mut R,
) -> f64 {
    let mut u: f64 = rng.random();
    if u == 0.0 {
        u = f64::MIN_POSITIVE;
    }
    (k as f64 + u * (e as f64 + 1.0)) / (n as f64 + 1.0)
}

/// Scaled ranks `rank/(n+1)` with ties broken by a random permutation of the
/// tied positions. The output is always a permutation of `{i/(n+1)}`.
pub fn pseudo_observations<R: Rng + ?Sized>(sample: &[f64], rng: &mut R) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    let mut u = vec![0.0; sample.len()];
    pseudo_observations_into(sample, rng, &mut idx, &mut u);
    u
}

/// Buffer-reusing core of `pseudo_observations`: `idx` and `out` must have
/// the sample's length; `idx` contents are overwritten.
pub(crate) fn pseudo_observations_into<R: Rng + ?Sized>(
    sample: &[f64],
    rng: &mut R,
    idx: &mut [usize],
    out: &mut [f64],
) {
    let n = sample.len();
    debug_assert!(idx.len() == n && out.len() == n);
    for (j, slot) in idx.iter_mut().enumerate() {
        *slot = j;
    }
    idx.sort_unstable_by(|&a, &b| sample[a].total_cmp(&sample[b]));

    // Shuffle each maximal run of tied values; distinct values consume no
    // randomness, so tie-free data is rng-invariant.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sample[idx[end]] == sample[idx[start]] {
            end += 1;
        }
        if end - start > 1 {
            idx[start..end].shuffle(rng);
        }
        start = end;
    }

    let denom = (n + 1) as f64;
    for (rank0, &i) in idx.iter().enumerate() {
        out[i] = (rank0 + 1) as f64 / denom;
    }
}

/// Pearson, Kendall (tau-b), and Spearman estimates for a synchronized pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DependenceMeasures {
    pub pearson: f64,
    pub kendall: f64,
    pub spearman: f64,
}

pub fn dependence_measures(pair: &SyncedPair) -> Result<DependenceMeasures> {
    let (x, y) = (pair.values_1(), pair.values_2());
    if x.len() < 2 {
        return Err(Error::Data("dependence measures need at least 2 observations".into()));
    }
    if variance(x) == 0.0 || variance(y) == 0.0 {
        return Err(Error::Data("dependence measures: zero variance column".into()));
    }
    Ok(DependenceMeasures {
        pearson: pearson(x, y),
        kendall: kendall_tau(x, y),
        spearman: spearman(x, y),
    })
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Kendall tau-b in O(n log n): sort by (x, y), count discordant pairs as
/// merge-sort inversions of the y column, correct for ties.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let tie_pairs = |key: &dyn Fn(usize) -> (f64, f64), order: &[usize]| -> u64 {
        let mut total = 0u64;
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && key(order[end]) == key(order[start]) {
                end += 1;
            }
            let c = (end - start) as u64;
            total += c * (c - 1) / 2;
            start = end;
        }
        total
    };

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs(&|i| (x[i], x[i]), &idx);
    let n3 = tie_pairs(&|i| (x[i], y[i]), &idx);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let discordant = count_inversions(&mut ys);

    let mut y_order: Vec<usize> = (0..n).collect();
    y_order.sort_unstable_by(|&a, &b| y[a].total_cmp(&y[b]));
    let n2 = tie_pairs(&|i| (y[i], y[i]), &y_order);

    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * discordant as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    num / den
}

fn count_inversions(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut inv = count_inversions(left) + count_inversions(right);

    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            inv += (left.len() - i) as u64;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    v.copy_from_slice(&merged);
    inv
}

/// Ranks 1..n with tied values assigned their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}
