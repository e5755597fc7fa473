//! Evidence lower bound of the Cox model.
//!
//! The intercept and baseline slope are integrated out in closed form:
//! `E[e^b] = exp(mu + s^2/2)` and `E[e^{rho l}] = (1 - l/r)^{-a}` for
//! `rho ~ Gamma(a, r)` (infinite once `l >= r`). Only the signal paths are
//! Monte Carlo draws, fixed by a seed so the bound is a deterministic surface.

use rayon::prelude::*;
use statrs::function::gamma::digamma;

use super::{kl_dirichlet, kl_gamma, kl_normal, GammaParams, ModePrior, ModeState, NormalParams, Priors, UnitSignals, VariationalState, MODULE};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, sample_gaussian, Jitter};
use crate::rng::{stream, tag};
use crate::survival::CoxCoefficients;

/// Signal draws of one unit, with trapezoid weights for its grid.
#[derive(Debug, Clone)]
pub(crate) struct UnitDraws {
    pub(crate) mode: usize,
    pub(crate) failed: bool,
    covariates: Vec<f64>,
    grid: Vec<f64>,
    weights: Vec<f64>,
    n_sensors: usize,
    /// `f[(s * G + g) * J + j]`: draw `s`, grid node `g`, sensor `j`.
    f: Vec<f64>,
    n_draws: usize,
}

/// Fixed signal-path draws for every training unit.
#[derive(Debug, Clone)]
pub struct PathDraws {
    pub(crate) units: Vec<UnitDraws>,
}

fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = 0.5 * (grid[i] - grid[i - 1]);
        w[i - 1] += h;
        w[i] += h;
    }
    w
}

fn check_unit(u: &UnitSignals) -> Result<(usize, usize)> {
    let Some(first) = u.sensors.first() else {
        return Ok((0, 0));
    };
    let g = first.times.len();
    if g == 0 || u.sensors.iter().any(|s| s.times != first.times) {
        return Err(Error::contract(MODULE, format!("unit {}: sensor posteriors must share one non-empty grid", u.id)));
    }
    let last = first.times[g - 1];
    if first.times[0] > 0.0 || (last - u.record.time).abs() > 1e-9 * u.record.time.max(1.0) {
        return Err(Error::contract(MODULE, format!("unit {}: signal grid must span [0, event time]", u.id)));
    }
    Ok((g, u.sensors.len()))
}

/// Draws `n_mc` joint signal paths per unit and sensor.
pub fn draw_paths(units: &[UnitSignals], n_mc: usize, seed: u64) -> Result<PathDraws> {
    if n_mc == 0 {
        return Err(Error::contract(MODULE, "n_mc must be at least 1"));
    }
    let units = units
        .par_iter()
        .map(|u| {
            let (g, j_count) = check_unit(u)?;
            let mut f = vec![0.0; n_mc * g * j_count];
            for (j, post) in u.sensors.iter().enumerate() {
                let factor = cholesky(&post.cov, Jitter::IfNeeded, MODULE, "signal posterior covariance")?;
                let mut rng = stream(seed, &[tag::ELBO_PATHS, u.id as u64, j as u64]);
                let draws = sample_gaussian(&post.mean, &factor.l(), n_mc, &mut rng);
                for s in 0..n_mc {
                    for gi in 0..g {
                        f[(s * g + gi) * j_count + j] = draws[(s, gi)];
                    }
                }
            }
            let grid = u.sensors.first().map(|s| s.times.clone()).unwrap_or_else(|| vec![0.0, u.record.time]);
            Ok(UnitDraws {
                mode: u.mode,
                failed: u.record.failed,
                covariates: u.record.covariates.clone(),
                weights: trapezoid_weights(&grid),
                grid,
                n_sensors: j_count,
                f,
                n_draws: n_mc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathDraws { units })
}

impl PathDraws {
    /// A single "draw" per unit equal to the posterior mean path.
    pub fn posterior_means(units: &[UnitSignals]) -> Result<Self> {
        let units = units
            .iter()
            .map(|u| {
                let (g, j_count) = check_unit(u)?;
                let mut f = vec![0.0; g * j_count];
                for (j, post) in u.sensors.iter().enumerate() {
                    for gi in 0..g {
                        f[gi * j_count + j] = post.mean[gi];
                    }
                }
                let grid = u.sensors.first().map(|s| s.times.clone()).unwrap_or_else(|| vec![0.0, u.record.time]);
                Ok(UnitDraws {
                    mode: u.mode,
                    failed: u.record.failed,
                    covariates: u.record.covariates.clone(),
                    weights: trapezoid_weights(&grid),
                    grid,
                    n_sensors: j_count,
                    f,
                    n_draws: 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { units })
    }

    pub fn mode_counts(&self, n_modes: usize) -> Vec<usize> {
        let mut c = vec![0; n_modes];
        for u in &self.units {
            if u.mode < n_modes {
                c[u.mode] += 1;
            }
        }
        c
    }

    /// Largest event time among units of `mode`.
    pub(crate) fn max_time(&self, mode: usize) -> f64 {
        self.units.iter().filter(|u| u.mode == mode).map(|u| *u.grid.last().unwrap()).fold(0.0, f64::max)
    }

    /// Expected Cox log-likelihood of the units of `mode`.
    ///
    /// `b` is `N(mean, var)` (`var = 0` is a point mass); returns `-inf` when the
    /// moment generating function of `rho` diverges on some unit's grid.
    pub fn expected_loglik(&self, mode: usize, b: NormalParams, rho: RhoMoments, coef: &CoxCoefficients) -> f64 {
        let exp_b = (b.mean + 0.5 * b.var).exp();
        let rho_mean = rho.mean();
        let terms: Vec<f64> = self
            .units
            .par_iter()
            .filter(|u| u.mode == mode)
            .map(|u| {
                let st = coef.static_term(&u.covariates).unwrap_or(f64::NAN);
                let g = u.grid.len();
                let j_count = u.n_sensors;
                let mut base = Vec::with_capacity(g);
                for (l, w) in u.grid.iter().zip(&u.weights) {
                    match rho.log_mgf(*l) {
                        Some(m) => base.push(w * (m + st).exp()),
                        None => return f64::NEG_INFINITY,
                    }
                }
                let mut integral = 0.0;
                let mut event_signal = 0.0;
                for s in 0..u.n_draws {
                    let rows = &u.f[s * g * j_count..(s + 1) * g * j_count];
                    let mut acc = 0.0;
                    for gi in 0..g {
                        let lin: f64 = coef.beta.iter().zip(&rows[gi * j_count..(gi + 1) * j_count]).map(|(b, f)| b * f).sum();
                        acc += base[gi] * lin.exp();
                    }
                    integral += acc;
                    if u.failed {
                        event_signal +=
                            coef.beta.iter().zip(&rows[(g - 1) * j_count..g * j_count]).map(|(b, f)| b * f).sum::<f64>();
                    }
                }
                let n = u.n_draws as f64;
                let mut v = -exp_b * integral / n;
                if u.failed {
                    v += b.mean + rho_mean * u.grid[g - 1] + st + event_signal / n;
                }
                v
            })
            .collect();
        let total: f64 = terms.iter().sum();
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }
}

/// What is known about `rho` when taking expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMoments {
    Point(f64),
    Gamma(GammaParams),
}

impl RhoMoments {
    fn mean(&self) -> f64 {
        match self {
            RhoMoments::Point(r) => *r,
            RhoMoments::Gamma(g) => g.mean(),
        }
    }

    /// `ln E[exp(rho l)]`, `None` where it is infinite.
    fn log_mgf(&self, l: f64) -> Option<f64> {
        match self {
            RhoMoments::Point(r) => Some(r * l),
            RhoMoments::Gamma(g) => {
                let x = l / g.rate;
                if x < 1.0 {
                    Some(-g.shape * (-x).ln_1p())
                } else {
                    None
                }
            }
        }
    }
}

/// ELBO contribution of one mode: expected log-likelihood minus the KL terms of `b` and `rho`.
pub(crate) fn mode_elbo(draws: &PathDraws, mode: usize, q: &ModeState, prior: &ModePrior) -> f64 {
    let kl = match (kl_normal((q.b.mean, q.b.var), (prior.b.mean, prior.b.var)), kl_gamma((q.rho.shape, q.rho.rate), (prior.rho.shape, prior.rho.rate))) {
        (Ok(a), Ok(b)) => a + b,
        _ => return f64::NEG_INFINITY,
    };
    draws.expected_loglik(mode, q.b, RhoMoments::Gamma(q.rho), &q.coef) - kl
}

/// `sum_i E[log Pi_{z_i}] - KL(q(Pi) || p(Pi))`.
pub(crate) fn mode_label_term(alpha_q: &[f64], alpha_p: &[f64], counts: &[usize]) -> Result<f64> {
    let kl = kl_dirichlet(alpha_q, alpha_p)?;
    let total = digamma(alpha_q.iter().sum());
    let expected: f64 = alpha_q.iter().zip(counts).map(|(a, c)| *c as f64 * (digamma(*a) - total)).sum();
    Ok(expected - kl)
}

/// Full ELBO over all modes, estimated with `n_mc` seeded signal paths per unit.
pub fn elbo_estimate(state: &VariationalState, priors: &Priors, units: &[UnitSignals], n_mc: usize, seed: u64) -> Result<f64> {
    priors.validate()?;
    let k = priors.modes.len();
    if state.modes.len() != k || state.alpha.len() != k {
        return Err(Error::contract(MODULE, "variational state and priors disagree on the number of modes"));
    }
    if let Some(u) = units.iter().find(|u| u.mode >= k) {
        return Err(Error::contract(MODULE, format!("unit {} has mode {} outside the model", u.id, u.mode + 1)));
    }
    let draws = draw_paths(units, n_mc, seed)?;
    let counts = draws.mode_counts(k);
    let mut elbo = mode_label_term(&state.alpha, &priors.alpha, &counts)?;
    for m in 0..k {
        elbo += mode_elbo(&draws, m, &state.modes[m], &priors.modes[m]);
    }
    Ok(elbo)
}
