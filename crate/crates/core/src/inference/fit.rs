//! Outer optimization of the variational parameters, one mode at a time.
//!
//! Per mode the free vector is `[mu_b, ln s_b^2, ln E[rho], ln a_rho, beta.., gamma..]`.
//! A plug-in MAP fit on posterior-mean signal paths supplies the starting
//! point; the seeded Monte Carlo ELBO is then maximized by Nelder–Mead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::elbo::{mode_elbo, mode_label_term};
use super::{
    dirichlet_conjugate_update, draw_paths, GammaParams, ModePrior, ModeState, NormalParams, PathDraws, Priors, RhoMoments,
    UnitSignals, VariationalState, MODULE,
};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead_maximize, NelderMeadOptions};
use crate::survival::CoxCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Signal paths per unit in the ELBO.
    pub n_mc: usize,
    pub max_evals: usize,
    pub restarts: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { n_mc: 64, max_evals: 3000, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFitReport {
    pub initial_elbo: f64,
    pub final_elbo: f64,
    /// Best ELBO after each simplex iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub modes: Vec<ModeFitReport>,
    pub label_term: f64,
    pub elbo: f64,
}

struct Layout {
    n_sensors: usize,
    n_covariates: usize,
}

impl Layout {
    fn len(&self) -> usize {
        4 + self.n_sensors + self.n_covariates
    }

    fn decode(&self, x: &[f64]) -> ModeState {
        let mean_rho = x[2].exp();
        let shape = x[3].exp();
        ModeState {
            b: NormalParams { mean: x[0], var: x[1].exp() },
            rho: GammaParams { shape, rate: shape / mean_rho },
            coef: CoxCoefficients {
                beta: x[4..4 + self.n_sensors].to_vec(),
                gamma: x[4 + self.n_sensors..].to_vec(),
            },
        }
    }

    fn encode(&self, s: &ModeState) -> Vec<f64> {
        let mut x = vec![s.b.mean, s.b.var.ln(), s.rho.mean().ln(), s.rho.shape.ln()];
        x.extend(&s.coef.beta);
        x.extend(&s.coef.gamma);
        x
    }
}

/// Log prior density of `rho` up to a constant.
fn log_gamma_kernel(rho: f64, p: GammaParams) -> f64 {
    (p.shape - 1.0) * rho.ln() - p.rate * rho
}

/// Plug-in MAP of `(b, rho, beta, gamma)` using posterior-mean paths.
fn plug_in_start(means: &PathDraws, mode: usize, prior: &ModePrior, layout: &Layout, n_failures: usize, max_time: f64) -> Result<ModeState> {
    let n = 2 + layout.n_sensors + layout.n_covariates;
    let objective = |x: &[f64]| -> f64 {
        let rho = x[1].exp();
        let coef = CoxCoefficients { beta: x[2..2 + layout.n_sensors].to_vec(), gamma: x[2 + layout.n_sensors..].to_vec() };
        let ll = means.expected_loglik(mode, NormalParams { mean: x[0], var: 0.0 }, RhoMoments::Point(rho), &coef);
        let d = x[0] - prior.b.mean;
        ll - 0.5 * d * d / prior.b.var + log_gamma_kernel(rho, prior.rho)
    };
    let mut x0 = vec![0.0; n];
    x0[0] = prior.b.mean;
    x0[1] = prior.rho.mean().ln();
    let mut steps = vec![0.2; n];
    steps[0] = 0.5;
    steps[1] = 1.0;
    let opts = NelderMeadOptions { max_evals: 4000, f_tol: 1e-8, x_tol: 1e-7, restarts: 3 };
    let res = nelder_mead_maximize(objective, &x0, &steps, opts)?;
    let x = res.x;
    let rho = x[1].exp().max(1e-8);
    // Start q(rho) tight around the estimate, with a rate comfortably above every grid time.
    let mut shape = 20.0;
    if shape / rho < 2.0 * max_time {
        shape = 2.0 * max_time * rho;
    }
    Ok(ModeState {
        b: NormalParams { mean: x[0], var: 1.0 / (n_failures.max(1) as f64 + 1.0 / prior.b.var) },
        rho: GammaParams { shape, rate: shape / rho },
        coef: CoxCoefficients { beta: x[2..2 + layout.n_sensors].to_vec(), gamma: x[2 + layout.n_sensors..].to_vec() },
    })
}

fn fit_mode(
    draws: &PathDraws,
    means: &PathDraws,
    mode: usize,
    prior: &ModePrior,
    layout: &Layout,
    config: &InferenceConfig,
) -> Result<(ModeState, ModeFitReport)> {
    let n_failures = means.units.iter().filter(|u| u.mode == mode && u.failed).count();
    let max_time = draws.max_time(mode);
    let start = plug_in_start(means, mode, prior, layout, n_failures, max_time)?;
    let x0 = layout.encode(&start);
    let objective = |x: &[f64]| mode_elbo(draws, mode, &layout.decode(x), prior);
    let initial_elbo = objective(&x0);
    if !initial_elbo.is_finite() {
        return Err(Error::numerical(MODULE, format!("mode {}: ELBO is not finite at the starting point {x0:?}", mode + 1)));
    }
    let mut steps = vec![0.1; layout.len()];
    steps[1] = 0.5;
    steps[2] = 0.2;
    steps[3] = 0.5;
    let opts = NelderMeadOptions { max_evals: config.max_evals, f_tol: 1e-7, x_tol: 1e-7, restarts: config.restarts };
    let res = nelder_mead_maximize(objective, &x0, &steps, opts).map_err(|e| {
        Error::numerical(MODULE, format!("mode {}: optimizer failed from {x0:?}: {e}", mode + 1))
    })?;
    if !res.value.is_finite() {
        return Err(Error::numerical(MODULE, format!("mode {}: ELBO diverged; trace {:?}", mode + 1, res.trace)));
    }
    let state = layout.decode(&res.x);
    Ok((state, ModeFitReport { initial_elbo, final_elbo: res.value, trace: res.trace, evaluations: res.evaluations }))
}

/// Fits the variational posterior given training units' signal posteriors.
///
/// The Dirichlet factor is set by the conjugate update; each mode's remaining
/// parameters are optimized independently.
pub fn fit(
    units: &[UnitSignals],
    priors: &Priors,
    n_covariates: usize,
    n_sensors: usize,
    config: &InferenceConfig,
    seed: u64,
) -> Result<(VariationalState, InferenceReport)> {
    priors.validate()?;
    if config.n_mc == 0 || config.max_evals == 0 {
        return Err(Error::config(MODULE, "n_mc and max_evals must be positive"));
    }
    let k = priors.modes.len();
    if let Some(u) = units.iter().find(|u| u.mode >= k || u.sensors.len() != n_sensors || u.record.covariates.len() != n_covariates) {
        return Err(Error::contract(MODULE, format!("unit {} does not match the model dimensions", u.id)));
    }
    let draws = draw_paths(units, config.n_mc, seed)?;
    let means = PathDraws::posterior_means(units)?;
    let counts = draws.mode_counts(k);
    let alpha = dirichlet_conjugate_update(&priors.alpha, &counts)?;
    let layout = Layout { n_sensors, n_covariates };
    let fitted: Vec<(ModeState, ModeFitReport)> = (0..k)
        .into_par_iter()
        .map(|m| fit_mode(&draws, &means, m, &priors.modes[m], &layout, config))
        .collect::<Result<Vec<_>>>()?;
    let label_term = mode_label_term(&alpha, &priors.alpha, &counts)?;
    let elbo = label_term + fitted.iter().map(|(_, r)| r.final_elbo).sum::<f64>();
    let (modes, reports): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    Ok((VariationalState { alpha, modes }, InferenceReport { modes: reports, label_term, elbo }))
}
