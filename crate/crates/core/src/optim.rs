//! Small dense optimizers used by the maximum-likelihood fits.

/// Result of a quasi-Newton minimization.
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with backtracking Armijo line search. `f_grad` returns the objective
/// and its gradient. Convergence is declared when the Euclidean gradient norm
/// drops below `grad_tol`.
pub fn bfgs<F>(mut f_grad: F, x0: &[f64], grad_tol: f64, max_iter: usize) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f_grad(&x);
    let mut h = identity(n);
    let mut iterations = 0;

    for _ in 0..max_iter {
        let gnorm = norm(&g);
        if gnorm < grad_tol {
            return BfgsResult { x, f: fx, grad_norm: gnorm, iterations, converged: true };
        }
        iterations += 1;

        // d = -H g
        let mut d = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                d[i] -= h[i * n + j] * g[j];
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        if !slope.is_finite() || slope >= 0.0 {
            // Lost positive-definiteness; restart from steepest descent.
            h = identity(n);
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        // Backtracking line search.
        let mut alpha = 1.0;
        let mut x_new;
        let f_new;
        let g_new;
        loop {
            x_new = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect::<Vec<_>>();
            let (f_try, g_try) = f_grad(&x_new);
            if f_try.is_finite() && f_try <= fx + 1e-4 * alpha * slope {
                f_new = f_try;
                g_new = g_try;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                // No progress possible along this direction.
                return BfgsResult { x, f: fx, grad_norm: gnorm, iterations, converged: false };
            }
        }

        // BFGS inverse-Hessian update.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) {
            let rho = 1.0 / sy;
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h[i * n + j] * y[j];
                }
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let mut h_new = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    h_new[i * n + j] = h[i * n + j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * (1.0 + rho * yhy) * s[i] * s[j];
                }
            }
            h = h_new;
        }

        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let gnorm = norm(&g);
    BfgsResult { x, f: fx, grad_norm: gnorm, iterations, converged: gnorm < grad_tol }
}

/// Result of a Nelder-Mead minimization.
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Standard Nelder-Mead simplex (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5). Converges when both the function spread and the simplex
/// diameter fall below the tolerances.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    initial_step: &[f64],
    f_tol: f64,
    x_tol: f64,
    max_eval: usize,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(p);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += initial_step[i];
        simplex.push(p);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    loop {
        // Order ascending by function value.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let f_spread = fv[worst] - fv[best];
        let x_spread = (0..n)
            .map(|d| {
                let vals = simplex.iter().map(|p| p[d]);
                let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                let mn = vals.fold(f64::INFINITY, f64::min);
                mx - mn
            })
            .fold(0.0f64, f64::max);
        if f_spread <= f_tol * (1.0 + fv[best].abs()) && x_spread <= x_tol {
            return NelderMeadResult {
                x: simplex[best].clone(),
                f: fv[best],
                evaluations: evals,
                converged: true,
            };
        }
        if evals >= max_eval {
            return NelderMeadResult {
                x: simplex[best].clone(),
                f: fv[best],
                evaluations: evals,
                converged: false,
            };
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for (k, p) in simplex.iter().enumerate() {
            if k != worst {
                for d in 0..n {
                    centroid[d] += p[d] / n as f64;
                }
            }
        }

        let reflect: Vec<f64> = (0..n)
            .map(|d| centroid[d] + (centroid[d] - simplex[worst][d]))
            .collect();
        let f_reflect = eval(&reflect, &mut evals);

        if f_reflect < fv[best] {
            let expand: Vec<f64> = (0..n)
                .map(|d| centroid[d] + 2.0 * (centroid[d] - simplex[worst][d]))
                .collect();
            let f_expand = eval(&expand, &mut evals);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                fv[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                fv[worst] = f_reflect;
            }
        } else if f_reflect < fv[second_worst] {
            simplex[worst] = reflect;
            fv[worst] = f_reflect;
        } else {
            let outside = f_reflect < fv[worst];
            let contract: Vec<f64> = if outside {
                (0..n).map(|d| centroid[d] + 0.5 * (reflect[d] - centroid[d])).collect()
            } else {
                (0..n).map(|d| centroid[d] + 0.5 * (simplex[worst][d] - centroid[d])).collect()
            };
            let f_contract = eval(&contract, &mut evals);
            let accept = if outside { f_contract <= f_reflect } else { f_contract < fv[worst] };
            if accept {
                simplex[worst] = contract;
                fv[worst] = f_contract;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for k in 0..=n {
                    if k != best {
                        for d in 0..n {
                            simplex[k][d] = best_point[d] + 0.5 * (simplex[k][d] - best_point[d]);
                        }
                        fv[k] = eval(&simplex[k].clone(), &mut evals);
                    }
                }
            }
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_minimizes_quadratic() {
        let r = bfgs(
            |x| {
                let f = (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
                (f, vec![2.0 * (x[0] - 3.0), 4.0 * (x[1] + 1.0)])
            },
            &[0.0, 0.0],
            1e-10,
            100,
        );
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-8);
        assert!((r.x[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn bfgs_minimizes_rosenbrock() {
        let r = bfgs(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ];
                (f, g)
            },
            &[-1.2, 1.0],
            1e-8,
            500,
        );
        assert!(r.converged, "grad norm {}", r.grad_norm);
        assert!((r.x[0] - 1.0).abs() < 1e-5);
        assert!((r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn nelder_mead_minimizes_rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            1e-12,
            1e-8,
            5000,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
        assert!((r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_handles_infinite_regions() {
        // Objective undefined outside the unit disk; optimum at the origin.
        let r = nelder_mead(
            |x| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 >= 1.0 {
                    f64::INFINITY
                } else {
                    r2
                }
            },
            &[0.5, 0.5],
            &[0.3, 0.3],
            1e-12,
            1e-8,
            5000,
        );
        assert!(r.x[0].abs() < 1e-4 && r.x[1].abs() < 1e-4);
    }
}
