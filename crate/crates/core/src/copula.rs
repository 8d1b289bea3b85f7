//! Bivariate Student copula: density, conditional cdf, sampling, and
//! maximum-likelihood fitting.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{self, kendall_tau};
use crate::error::{Error, Result};

/// Student copula parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentCopulaParams {
    pub rho: f64,
    pub nu: f64,
}

impl StudentCopulaParams {
    pub fn new(rho: f64, nu: f64) -> Result<Self> {
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(Error::Data(format!("copula correlation must be in (-1,1), got {rho}")));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Data(format!("copula degrees of freedom must be > 0, got {nu}")));
        }
        Ok(StudentCopulaParams { rho, nu })
    }
}

/// Which stage of the backtest a unit-square sample comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    InCopula,
    InTrfCopula,
    OutCopula,
    OutTrfCopula,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::InCopula => "in-copula",
            Provenance::InTrfCopula => "in-trf-copula",
            Provenance::OutCopula => "out-copula",
            Provenance::OutTrfCopula => "out-trf-copula",
        }
    }
}

/// A sample of strictly interior unit-square points with its provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CopulaSample {
    points: Vec<(f64, f64)>,
    provenance: Provenance,
    asset_ids: (String, String),
}

impl CopulaSample {
    pub fn new(
        points: Vec<(f64, f64)>,
        provenance: Provenance,
        asset_ids: (String, String),
    ) -> Result<Self> {
        for &(u1, u2) in &points {
            let interior =
                u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0 && u1.is_finite() && u2.is_finite();
            if !interior {
                return Err(Error::Data(format!(
                    "copula sample point ({u1}, {u2}) not strictly inside the unit square"
                )));
            }
        }
        Ok(CopulaSample { points, provenance, asset_ids })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn asset_ids(&self) -> (&str, &str) {
        (&self.asset_ids.0, &self.asset_ids.1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Natural log of the copula density at an interior point.
pub fn copula_log_density(u: (f64, f64), params: &StudentCopulaParams) -> Result<f64> {
    let (u1, u2) = u;
    if !(u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0) {
        return Err(Error::Data(format!("copula density needs interior input, got ({u1}, {u2})")));
    }
    let nu = params.nu;
    let rho = params.rho;
    let x1 = dist::std_t_quantile(u1, nu);
    let x2 = dist::std_t_quantile(u2, nu);
    Ok(log_density_at_quantiles(x1, x2, rho, nu, &LnNorm::new(rho, nu)))
}

pub fn copula_density(u: (f64, f64), params: &StudentCopulaParams) -> Result<f64> {
    copula_log_density(u, params).map(f64::exp)
}

/// Per-(rho, nu) constants of the log density.
struct LnNorm {
    c: f64,
}

impl LnNorm {
    fn new(rho: f64, nu: f64) -> Self {
        LnNorm {
            c: ln_gamma((nu + 2.0) / 2.0) + ln_gamma(nu / 2.0)
                - 2.0 * ln_gamma((nu + 1.0) / 2.0)
                - 0.5 * (1.0 - rho * rho).ln(),
        }
    }
}

/// Symmetric in (x1, x2) bit-for-bit: all mixed terms go through the
/// commutative products x1*x2 and x1^2 + x2^2.
fn log_density_at_quantiles(x1: f64, x2: f64, rho: f64, nu: f64, norm: &LnNorm) -> f64 {
    let s = x1 * x1 + x2 * x2;
    let c = x1 * x2;
    let q = (s - 2.0 * rho * c) / (1.0 - rho * rho);
    norm.c - 0.5 * (nu + 2.0) * (q / nu).ln_1p()
        + 0.5 * (nu + 1.0) * ((x1 * x1 / nu).ln_1p() + (x2 * x2 / nu).ln_1p())
}

/// Conditional cdf u2 = P(Z2 <= z2 | Z1 = z1) of the Student copula; a
/// Student t cdf with nu+1 degrees of freedom after standardization.
pub fn conditional_cdf(z2: f64, z1: f64, params: &StudentCopulaParams) -> Result<f64> {
    if !(z1 > 0.0 && z1 < 1.0 && z2 > 0.0 && z2 < 1.0) {
        return Err(Error::Data(format!(
            "conditional cdf needs interior input, got ({z1}, {z2})"
        )));
    }
    let nu = params.nu;
    let rho = params.rho;
    let x1 = dist::std_t_quantile(z1, nu);
    let x2 = dist::std_t_quantile(z2, nu);
    let scale = ((nu + x1 * x1) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
    Ok(dist::std_t_cdf((x2 - rho * x1) / scale, nu + 1.0))
}

/// Draw n points: bivariate Student via a correlated Gaussian pair scaled by
/// sqrt(nu / chi^2_nu), mapped to the unit square by the t cdf per coordinate.
pub fn sample_copula<R: Rng + ?Sized>(
    params: &StudentCopulaParams,
    n: usize,
    rng: &mut R,
) -> CopulaSample {
    let chi2 = ChiSquared::new(params.nu).expect("validated nu");
    let beta = (1.0 - params.rho * params.rho).sqrt();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let g1: f64 = StandardNormal.sample(rng);
        let g2: f64 = StandardNormal.sample(rng);
        let y2 = params.rho * g1 + beta * g2;
        let w = (params.nu / chi2.sample(rng)).sqrt();
        let u1 = dist::std_t_cdf(g1 * w, params.nu);
        let u2 = dist::std_t_cdf(y2 * w, params.nu);
        // cdf of a finite value is strictly interior up to rounding; clamp
        // the one-ulp cases.
        points.push((clamp_interior(u1), clamp_interior(u2)));
    }
    CopulaSample {
        points,
        provenance: Provenance::InCopula,
        asset_ids: ("sim-1".into(), "sim-2".into()),
    }
}

fn clamp_interior(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Kendall-tau inversion for elliptical copulas.
pub fn kendall_tau_inversion(tau: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * tau).sin()
}

/// Outcome of the copula maximum-likelihood fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudentCopulaFit {
    pub params: StudentCopulaParams,
    pub log_likelihood: f64,
    /// Initialization from Kendall-tau inversion.
    pub rho_init: f64,
    pub evaluations: usize,
    /// True when the optimizer pushed nu beyond 1000; the fit is then
    /// reported at the cap and is effectively Gaussian.
    pub normal_like: bool,
}

const NU_CAP: f64 = 1e3;

/// Two-step maximum-likelihood fit: Kendall-tau inversion for the starting
/// correlation, then a joint simplex search over (atanh rho, ln nu).
pub fn fit_student_copula(sample: &CopulaSample) -> Result<StudentCopulaFit> {
    let pts = sample.points();
    let n = pts.len();
    if n < 100 {
        return Err(Error::Data(format!("copula fit needs at least 100 points, got {n}")));
    }
    let u1: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let u2: Vec<f64> = pts.iter().map(|p| p.1).collect();

    let tau = kendall_tau(&u1, &u2);
    let rho0 = kendall_tau_inversion(tau).clamp(-0.995, 0.995);

    // Quantiles are recomputed for every trial nu by walking the sample in
    // sorted order, each point Newton-seeded by its predecessor.
    let sort_perm = |u: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_unstable_by(|&a, &b| u[a].total_cmp(&u[b]));
        idx
    };
    let ord1 = sort_perm(&u1);
    let ord2 = sort_perm(&u2);
    let mut x1 = vec![0.0; n];
    let mut x2 = vec![0.0; n];
    let mut nu_of_buffer = f64::NAN;

    let mut neg_mean_loglik = |theta: &[f64]| -> f64 {
        let rho = theta[0].tanh();
        let nu = theta[1].exp();
        if !(0.02..=1e7).contains(&nu) || rho.abs() >= 1.0 {
            return f64::INFINITY;
        }
        if nu != nu_of_buffer {
            for (ord, u, x) in [(&ord1, &u1, &mut x1), (&ord2, &u2, &mut x2)] {
                let mut prev: Option<f64> = None;
                for &i in ord.iter() {
                    let q = dist::std_t_quantile_seeded(u[i], nu, prev);
                    x[i] = q;
                    prev = Some(q);
                }
            }
            nu_of_buffer = nu;
        }
        let norm = LnNorm::new(rho, nu);
        let mut sum = 0.0;
        for i in 0..n {
            sum += log_density_at_quantiles(x1[i], x2[i], rho, nu, &norm);
        }
        -sum / n as f64
    };

    let start = [rho0.atanh(), 6.0f64.ln()];
    let r = crate::optim::nelder_mead(&mut neg_mean_loglik, &start, &[0.2, 0.5], 1e-11, 1e-5, 600);
    if !r.converged {
        return Err(Error::Computation(format!(
            "copula fit did not converge after {} evaluations; tau-inversion rho0 = {:.6}, \
             last point rho = {:.6}, nu = {:.6}",
            r.evaluations,
            rho0,
            r.x[0].tanh(),
            r.x[1].exp(),
        )));
    }

    let mut rho = r.x[0].tanh();
    let mut nu = r.x[1].exp();
    let mut normal_like = false;
    let mut final_nml = r.f;
    if nu > NU_CAP {
        nu = NU_CAP;
        normal_like = true;
        // Re-center rho at the capped nu with a short 1-d simplex pass.
        let refit = crate::optim::nelder_mead(
            |t| neg_mean_loglik(&[t[0], NU_CAP.ln()]),
            &[rho.atanh()],
            &[0.05],
            1e-12,
            1e-7,
            200,
        );
        rho = refit.x[0].tanh();
        final_nml = refit.f;
    }

    Ok(StudentCopulaFit {
        params: StudentCopulaParams::new(rho, nu)?,
        log_likelihood: -final_nml * n as f64,
        rho_init: rho0,
        evaluations: r.evaluations,
        normal_like,
    })
}
