//! Hyperparameter fitting by multi-start L-BFGS on the sparse marginal likelihood.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fitc::{loglik_and_grad, pack, unpack, Flat};
use super::{posterior_u, CmgpHyper, CmgpModel, GroupData, InducingGrid, SparseMethod, MODULE};
use crate::error::{Error, Result};
use crate::kernels::{LatentKernelParams, SmoothingKernelParams};
use crate::optim::{lbfgs_maximize, LbfgsOptions};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmgpFitConfig {
    pub inducing_points: usize,
    /// Optimizer starts; the first is the supplied initial point, the rest are perturbations of it.
    pub restarts: usize,
    pub max_iter: usize,
    pub method: SparseMethod,
}

impl Default for CmgpFitConfig {
    fn default() -> Self {
        Self { inducing_points: 20, restarts: 5, max_iter: 200, method: SparseMethod::Fitc }
    }
}

impl CmgpFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inducing_points < 2 {
            return Err(Error::config(MODULE, "inducing_points must be at least 2"));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::config(MODULE, "restarts and max_iter must be positive"));
        }
        Ok(())
    }
}

/// Outcome of each optimizer start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmgpFitReport {
    pub initial_loglik: f64,
    /// Final log-likelihood per start; `None` where the start failed.
    pub restart_logliks: Vec<Option<f64>>,
    pub best_restart: usize,
    pub iterations: usize,
}

/// Data-driven starting point: length scale a fifth of the observed span,
/// amplitudes from each unit's RMS, noise a tenth of the pooled variance.
pub fn default_init(data: &GroupData) -> Result<CmgpHyper> {
    let all: Vec<f64> = data.iter().flat_map(|(_, s)| s.values.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::contract(MODULE, "cannot initialise hyperparameters without observations"));
    }
    let span = data
        .iter()
        .flat_map(|(_, s)| s.times.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let lambda = span / 5.0;
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let ms = all.iter().map(|v| v * v).sum::<f64>() / n;
    let smoothing = data
        .iter()
        .map(|(id, s)| {
            let rms = if s.is_empty() {
                ms.sqrt()
            } else {
                (s.values.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
            };
            (*id, SmoothingKernelParams { eta: rms.max(1e-3), xi: 0.1 * lambda })
        })
        .collect();
    Ok(CmgpHyper {
        latent: LatentKernelParams { lambda },
        smoothing,
        noise_var: (0.1 * var).max(1e-6 * ms.max(1e-12)),
    })
}

fn perturb(theta: &[f64], seed: u64, restart: usize) -> Vec<f64> {
    let mut rng = stream(seed, &[tag::RESTART, restart as u64]);
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let mut out = theta.to_vec();
    out[0] += 0.5 * z();
    out[1] += z();
    for i in (2..out.len()).step_by(2) {
        out[i] *= (0.3 * z()).exp();
        out[i + 1] += 0.5 * z();
    }
    out
}

/// Maximizes the sparse marginal likelihood from `init` and seeded perturbations of it.
///
/// The result never has a lower likelihood than `init` when `init` is feasible.
pub fn fit_hyperparams(
    data: &GroupData,
    grid: &InducingGrid,
    init: &CmgpHyper,
    config: &CmgpFitConfig,
    seed: u64,
) -> Result<(CmgpHyper, CmgpFitReport)> {
    config.validate()?;
    init.validate()?;
    let flat = Flat::new(data);
    if flat.len() == 0 {
        return Err(Error::contract(MODULE, "cannot fit hyperparameters without observations"));
    }
    let theta0 = pack(init, &flat.units)?;
    let initial_loglik = loglik_and_grad(&flat, &theta0, grid, config.method).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
    let opts = LbfgsOptions { max_iter: config.max_iter, ..LbfgsOptions::default() };
    let runs: Vec<Result<crate::optim::OptimResult>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 { theta0.clone() } else { perturb(&theta0, seed, r) };
            lbfgs_maximize(|th| loglik_and_grad(&flat, th, grid, config.method), &start, opts)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    let mut iterations = 0;
    let mut restart_logliks = Vec::with_capacity(runs.len());
    for (r, run) in runs.iter().enumerate() {
        match run {
            Ok(res) => {
                iterations += res.iterations;
                restart_logliks.push(Some(res.value));
                if best.is_none_or(|(_, v)| res.value > v) {
                    best = Some((r, res.value));
                }
            }
            Err(_) => restart_logliks.push(None),
        }
    }
    let Some((best_restart, best_value)) = best else {
        let traces: Vec<String> = runs.iter().filter_map(|r| r.as_ref().err().map(|e| e.to_string())).collect();
        return Err(Error::numerical(MODULE, format!("every optimizer start failed: {}", traces.join("; "))));
    };
    let report = CmgpFitReport { initial_loglik, restart_logliks, best_restart, iterations };
    if best_value < initial_loglik {
        return Ok((init.clone(), report));
    }
    let theta = &runs[best_restart].as_ref().expect("best start succeeded").x;
    let mut hyper = unpack(theta, &flat.units);
    // Keep smoothing entries for units that had no observations here.
    for (id, s) in &init.smoothing {
        hyper.smoothing.entry(*id).or_insert(*s);
    }
    Ok((hyper, report))
}

/// Fits one (mode, sensor) group end to end: grid, hyperparameters and inducing posterior.
pub fn fit_group(
    mode: usize,
    sensor: usize,
    data: &GroupData,
    config: &CmgpFitConfig,
    seed: u64,
) -> Result<(CmgpModel, CmgpFitReport)> {
    config.validate()?;
    let t_max = data
        .iter()
        .flat_map(|(_, s)| s.times.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(t_max > 0.0) {
        return Err(Error::data(MODULE, format!("mode {} sensor {}: no observations after time zero", mode + 1, sensor + 1)));
    }
    let grid = InducingGrid::uniform(0.0, t_max, config.inducing_points)?;
    let init = default_init(data)?;
    let group_seed = crate::rng::derive_seed(seed, &[mode as u64, sensor as u64]);
    let (hyper, report) = fit_hyperparams(data, &grid, &init, config, group_seed)?;
    let (mean, cov) = posterior_u(data, &hyper, &grid, config.method)?;
    let log_marginal = super::sparse_marginal_loglik(data, &hyper, &grid, config.method)?;
    let model = CmgpModel::new(mode, sensor, config.method, hyper, grid, mean, cov, log_marginal)?;
    Ok((model, report))
}
