//! Small unconstrained optimizers used for hyperparameter fitting and VI.
//!
//! Both routines maximize. Objective evaluations that fail or return a
//! non-finite value are treated as infinitely bad points, so line searches and
//! simplex moves step away from them.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best objective value after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iter: 300, memory: 8, grad_tol: 1e-5, rel_tol: 1e-10 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS ascent with a backtracking Armijo line search.
///
/// `f` returns the objective and its gradient.
pub fn lbfgs_maximize<F>(mut f: F, x0: &[f64], opts: LbfgsOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        match f(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => Some((-v, g.into_iter().map(|gi| -gi).collect())),
            _ => None,
        }
    };
    let (mut fx, mut gx) = eval(x0).ok_or_else(|| {
        Error::numerical("optim", format!("objective is not finite at the initial point {x0:?}"))
    })?;
    let mut x = x0.to_vec();
    let mut evaluations = 1;
    let mut trace = vec![-fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gnorm = gx.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion for the search direction.
        let mut q = gx.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / gnorm.max(1.0)
        };
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &gx);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = gx.iter().map(|g| -g / gnorm.max(1.0)).collect();
            slope = dot(&dir, &gx);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            evaluations += 1;
            if let Some((fnew, gnew)) = eval(&xn) {
                if fnew <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-12 * dot(&yv, &yv).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        gx = gnew;
        trace.push(-fx);
        if improvement <= opts.rel_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(OptimResult { x, value: -fx, iterations, evaluations, trace, converged })
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this (absolute).
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Restarts from the best vertex while they keep improving the optimum.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 4000, f_tol: 1e-9, x_tol: 1e-8, restarts: 3 }
    }
}

/// Nelder–Mead simplex ascent. `steps` sets the initial simplex edge per coordinate.
pub fn nelder_mead_maximize<F>(mut f: F, x0: &[f64], steps: &[f64], opts: NelderMeadOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one initial step per coordinate");
    let mut evaluations = 0;
    let mut eval = |x: &[f64], count: &mut usize| -> f64 {
        *count += 1;
        let v = -f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let f0 = eval(x0, &mut evaluations);
    if !f0.is_finite() {
        return Err(Error::numerical("optim", format!("objective is not finite at the initial point {x0:?}")));
    }
    let mut best_x = x0.to_vec();
    let mut best_f = f0;
    let mut trace = vec![-f0];
    let mut iterations = 0;
    let mut converged = false;

    for round in 0..=opts.restarts {
        let start_f = best_f;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..n {
            let mut x = best_x.clone();
            x[i] += steps[i];
            let fx = eval(&x, &mut evaluations);
            simplex.push((x, fx));
        }
        converged = false;
        while evaluations < opts.max_evals {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            iterations += 1;
            if simplex[0].1 < best_f {
                best_f = simplex[0].1;
                best_x = simplex[0].0.clone();
            }
            trace.push(-best_f);
            let spread = simplex[n].1 - simplex[0].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| x.iter().zip(&simplex[0].0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
                .fold(0.0f64, f64::max);
            if (spread.is_finite() && spread <= opts.f_tol) || diameter <= opts.x_tol {
                converged = true;
                break;
            }
            let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
            let worst = simplex[n].clone();
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };
            let xr = along(1.0);
            let fr = eval(&xr, &mut evaluations);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evaluations);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evaluations);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evaluations);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            let best = simplex[0].0.clone();
            for v in simplex.iter_mut().skip(1) {
                let xs: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                let fs = eval(&xs, &mut evaluations);
                *v = (xs, fs);
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if simplex[0].1 < best_f {
            best_f = simplex[0].1;
            best_x = simplex[0].0.clone();
            trace.push(-best_f);
        }
        if round > 0 && start_f - best_f <= opts.f_tol.max(1e-12 * best_f.abs()) {
            break;
        }
        if evaluations >= opts.max_evals {
            break;
        }
    }
    Ok(OptimResult { x: best_x, value: -best_f, iterations, evaluations, trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
    }

    fn rosenbrock_grad(x: &[f64]) -> Vec<f64> {
        vec![
            -(-2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0])),
            -(200.0 * (x[1] - x[0] * x[0])),
        ]
    }

    #[test]
    fn lbfgs_finds_rosenbrock_optimum() {
        let r = lbfgs_maximize(|x| Ok((rosenbrock(x), rosenbrock_grad(x))), &[-1.2, 1.0], LbfgsOptions { max_iter: 500, ..Default::default() })
            .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_optimum() {
        let r = nelder_mead_maximize(rosenbrock, &[-1.2, 1.0], &[0.5, 0.5], NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        assert!(nelder_mead_maximize(|_| f64::NAN, &[0.0], &[1.0], NelderMeadOptions::default()).is_err());
        assert!(lbfgs_maximize(|_| Ok((f64::NEG_INFINITY, vec![0.0])), &[0.0], LbfgsOptions::default()).is_err());
    }

    #[test]
    fn nelder_mead_avoids_infeasible_region() {
        // log barrier: infeasible for x <= 0
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::NAN } else { x[0].ln() - x[0] };
        let r = nelder_mead_maximize(f, &[3.0], &[2.5], NelderMeadOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3);
    }
}
