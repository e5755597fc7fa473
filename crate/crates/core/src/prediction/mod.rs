//! Online prediction for a partially observed unit.
//!
//! The unit's observations up to the decision time `t*` update the mode
//! probabilities through each mode's CMGP predictive densities. Per mode, Monte
//! Carlo draws of `(b, rho)` and of a joint signal path over the prediction
//! window give conditional survival trajectories; mixing them by the mode
//! probabilities gives the marginal curve, whose integral is the RUL estimate.

mod export;
mod metrics;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmgp::{fit_unit_smoothing, predictive_logdensity, sample_f_paths};
use crate::data::Series;
use crate::error::{Error, Result};
use crate::inference::FittedModel;
use crate::kernels::SmoothingKernelParams;
use crate::linalg::{log_sum_exp, quantile_sorted};
use crate::rng::{derive_seed, stream, tag};

pub use export::{conditional_csv, predictions_csv, read_predictions, summary_json, PredictionSummary};
pub use metrics::{evaluate_metrics, metrics_csv, Distribution as MetricSummary, MetricsTable, PredictionRecord, UnitMetrics, UnitTruth};

pub(crate) const MODULE: &str = "prediction";

/// Survival below this level counts as the end of the curve for RUL integration.
pub const TAIL_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub n_mc: usize,
    /// Central credible level of the bands, e.g. 0.95.
    pub band_level: f64,
    /// Number of offsets (including zero) on the prediction grid.
    pub grid_points: usize,
    /// Fixed horizon; when absent it is `horizon_factor * (max training event time - t*)`.
    pub horizon: Option<f64>,
    pub horizon_factor: f64,
    /// Times the horizon may be doubled when the curve has not decayed below the tail threshold.
    pub max_horizon_doublings: usize,
    /// Without a fixed horizon, re-grid the reported curves over `[0, Δ0]`
    /// where `Δ0` is the first offset at which the marginal point falls below
    /// the tail threshold.
    pub trim_tail: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { n_mc: 500, band_level: 0.95, grid_points: 200, horizon: None, horizon_factor: 3.0, max_horizon_doublings: 4, trim_tail: true }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::config(MODULE, "n_mc must be at least 1"));
        }
        if !(self.band_level > 0.0 && self.band_level < 1.0) {
            return Err(Error::config(MODULE, format!("band_level must lie in (0, 1), got {}", self.band_level)));
        }
        if self.grid_points < 2 {
            return Err(Error::config(MODULE, "grid_points must be at least 2"));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config(MODULE, format!("horizon must be positive, got {h}")));
            }
        }
        if !(self.horizon_factor > 0.0 && self.horizon_factor.is_finite()) {
            return Err(Error::config(MODULE, "horizon_factor must be positive"));
        }
        Ok(())
    }

    /// Horizon for decision time `t_star`, never shorter than ten integration steps.
    pub fn horizon_for(&self, model: &FittedModel, t_star: f64) -> f64 {
        let floor = 10.0 * model.meta.integration_step;
        let h = self.horizon.unwrap_or(self.horizon_factor * (model.meta.max_event_time - t_star));
        h.max(floor)
    }
}

/// A unit observed up to the decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitView {
    pub id: u32,
    pub covariates: Vec<f64>,
    /// One series per sensor, containing only observations at or before `t*`.
    pub signals: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePosterior {
    pub probs: Vec<f64>,
    /// Sum over sensors of each mode's predictive log-density of the observations.
    pub log_densities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub t_star: f64,
    pub grid: Vec<f64>,
    /// Row `s` is the survival trajectory of draw `s`.
    pub samples: Vec<Vec<f64>>,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub unit_id: u32,
    pub t_star: f64,
    pub mode_posterior: ModePosterior,
    pub conditional: Vec<SurvivalCurve>,
    pub marginal: SurvivalCurve,
    pub rul: f64,
}

fn check_view(model: &FittedModel, view: &UnitView) -> Result<()> {
    if view.signals.len() != model.meta.n_sensors {
        return Err(Error::contract(
            MODULE,
            format!("unit {} has {} sensors; the model knows {}", view.id, view.signals.len(), model.meta.n_sensors),
        ));
    }
    if !view.covariates.is_empty() && view.covariates.len() != model.meta.n_covariates {
        return Err(Error::contract(MODULE, format!("unit {} has {} covariates", view.id, view.covariates.len())));
    }
    Ok(())
}

/// Smoothing parameters of the unit under every (mode, sensor) model, indexed `[mode][sensor]`.
pub fn personalize(model: &FittedModel, view: &UnitView) -> Result<Vec<Vec<SmoothingKernelParams>>> {
    check_view(model, view)?;
    (0..model.meta.n_modes)
        .map(|k| (0..model.meta.n_sensors).map(|j| fit_unit_smoothing(model.cmgp(k, j), &view.signals[j])).collect())
        .collect()
}

/// Posterior probabilities of the failure modes given the unit's observations.
///
/// `prior_override` replaces the Dirichlet posterior mean as the prior.
pub fn mode_posterior(
    model: &FittedModel,
    view: &UnitView,
    smoothing: &[Vec<SmoothingKernelParams>],
    prior_override: Option<&[f64]>,
) -> Result<ModePosterior> {
    check_view(model, view)?;
    let k_count = model.meta.n_modes;
    let prior = match prior_override {
        Some(p) if p.len() != k_count || p.iter().any(|v| !(*v >= 0.0)) => {
            return Err(Error::contract(MODULE, "prior override must hold one non-negative weight per mode"));
        }
        Some(p) => p.to_vec(),
        None => model.state.mode_prior(),
    };
    let log_densities = (0..k_count)
        .map(|k| {
            (0..model.meta.n_sensors)
                .map(|j| predictive_logdensity(model.cmgp(k, j), smoothing[k][j], &view.signals[j]))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModePosterior { probs: posterior_from_logs(&prior, &log_densities), log_densities })
}

/// Normalizes `prior_k * exp(log_density_k)` in log space.
pub fn posterior_from_logs(prior: &[f64], log_densities: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = prior.iter().zip(log_densities).map(|(p, l)| p.ln() + l).collect();
    let norm = log_sum_exp(&logs);
    let mut probs: Vec<f64> = logs.iter().map(|l| (l - norm).exp()).collect();
    let s: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= s;
    }
    probs
}

/// Offsets `0, h/(n-1), ..., h`.
pub fn offset_grid(horizon: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
    g[n - 1] = horizon;
    g
}

/// Pointwise mean and central quantile band of the sample rows.
///
/// The band is widened where needed so that it always contains the mean.
fn summarize(samples: &[Vec<f64>], level: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = samples[0].len();
    let a = 1.0 - level;
    let mut point = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut col = vec![0.0; samples.len()];
    for g in 0..n {
        for (c, row) in col.iter_mut().zip(samples) {
            *c = row[g];
        }
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        point.push(mean);
        lower.push(quantile_sorted(&col, a / 2.0).min(mean));
        upper.push(quantile_sorted(&col, 1.0 - a / 2.0).max(mean));
    }
    (point, lower, upper)
}

impl SurvivalCurve {
    /// Builds a curve from sample rows; the point is their pointwise mean.
    pub fn from_samples(t_star: f64, grid: Vec<f64>, samples: Vec<Vec<f64>>, level: f64) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|r| r.len() != grid.len()) || grid.is_empty() {
            return Err(Error::contract(MODULE, "every sample row needs one value per grid offset"));
        }
        let (point, lower, upper) = summarize(&samples, level);
        Ok(Self { t_star, grid, samples, point, lower, upper })
    }
}

/// Survival trajectories of the unit assuming failure mode `mode`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_survival(
    model: &FittedModel,
    mode: usize,
    view: &UnitView,
    smoothing: &[SmoothingKernelParams],
    t_star: f64,
    horizon: f64,
    config: &PredictConfig,
    seed: u64,
) -> Result<SurvivalCurve> {
    check_view(model, view)?;
    if !(horizon > 0.0) || config.n_mc == 0 {
        return Err(Error::contract(MODULE, "horizon and n_mc must be positive"));
    }
    if mode >= model.meta.n_modes {
        return Err(Error::contract(MODULE, format!("mode {} is not in the model", mode + 1)));
    }
    let grid = offset_grid(horizon, config.grid_points);
    // Refine each grid interval so the hazard integral uses at most the training step.
    let spacing = horizon / (config.grid_points - 1) as f64;
    let sub = (spacing / model.meta.integration_step).ceil().max(1.0) as usize;
    let n_nodes = (config.grid_points - 1) * sub + 1;
    let nodes: Vec<f64> = (0..n_nodes).map(|i| t_star + horizon * i as f64 / (n_nodes - 1) as f64).collect();

    let q = &model.state.modes[mode];
    let static_term = q.coef.static_term(&view.covariates)?;
    let unit_seed = derive_seed(seed, &[tag::PREDICT, view.id as u64, mode as u64, t_star.to_bits()]);
    let paths = (0..model.meta.n_sensors)
        .map(|j| {
            sample_f_paths(model.cmgp(mode, j), smoothing[j], Some(&view.signals[j]), &nodes, config.n_mc, derive_seed(unit_seed, &[j as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream(unit_seed, &[u64::MAX]);
    let rho_dist = Gamma::new(q.rho.shape, 1.0 / q.rho.rate)
        .map_err(|e| Error::numerical(MODULE, format!("invalid q(rho) for mode {}: {e}", mode + 1)))?;
    let mut samples = Vec::with_capacity(config.n_mc);
    for s in 0..config.n_mc {
        let z: f64 = rng.sample(StandardNormal);
        let b = q.b.mean + q.b.var.sqrt() * z;
        let rho: f64 = rho_dist.sample(&mut rng);
        let log_h = |i: usize| -> f64 {
            let signal: f64 = q.coef.beta.iter().enumerate().map(|(j, beta)| beta * paths[j][(s, i)]).sum();
            b + rho * nodes[i] + static_term + signal
        };
        let mut row = Vec::with_capacity(config.grid_points);
        row.push(1.0);
        let mut cum = 0.0;
        let mut prev = log_h(0).exp();
        for i in 1..n_nodes {
            let h = log_h(i).exp();
            cum += 0.5 * (nodes[i] - nodes[i - 1]) * (prev + h);
            prev = h;
            if i % sub == 0 {
                row.push((-cum).exp());
            }
        }
        samples.push(row);
    }
    SurvivalCurve::from_samples(t_star, grid, samples, config.band_level)
}

/// Mixes per-mode curves by the mode probabilities.
///
/// The point curve is the probability-weighted mixture of the conditional
/// points; sample `s` is sample `s` of a mode drawn for that index.
pub fn marginal_survival(curves: &[SurvivalCurve], probs: &[f64], level: f64, seed: u64) -> Result<SurvivalCurve> {
    if curves.is_empty() || curves.len() != probs.len() {
        return Err(Error::contract(MODULE, "one mode probability per conditional curve is required"));
    }
    let first = &curves[0];
    if curves.iter().any(|c| c.grid != first.grid || c.samples.len() != first.samples.len() || c.t_star != first.t_star) {
        return Err(Error::contract(MODULE, "conditional curves must share grid, decision time and draw count"));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(MODULE, format!("mode probabilities must be non-negative and sum to 1, got {probs:?}")));
    }
    let n = first.grid.len();
    let point: Vec<f64> = (0..n).map(|g| curves.iter().zip(probs).map(|(c, p)| p * c.point[g]).sum()).collect();
    let mut rng = stream(seed, &[tag::MIXTURE]);
    let last = probs.iter().rposition(|p| *p > 0.0).expect("probabilities sum to one");
    let samples: Vec<Vec<f64>> = (0..first.samples.len())
        .map(|s| {
            let u: f64 = rng.random::<f64>() * total;
            let k = probs
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .position(|c| u < c)
                .unwrap_or(last);
            curves[k].samples[s].clone()
        })
        .collect();
    let (_, mut lower, mut upper) = summarize(&samples, level);
    for g in 0..n {
        lower[g] = lower[g].min(point[g]);
        upper[g] = upper[g].max(point[g]);
    }
    Ok(SurvivalCurve { t_star: first.t_star, grid: first.grid.clone(), samples, point, lower, upper })
}

/// Expected remaining life: trapezoid integral of the point curve, stopped
/// at the first offset where it falls below [`TAIL_THRESHOLD`].
pub fn rul_estimate(curve: &SurvivalCurve) -> Result<f64> {
    let (g, s) = (&curve.grid, &curve.point);
    let mut total = 0.0;
    for i in 1..g.len() {
        total += 0.5 * (g[i] - g[i - 1]) * (s[i] + s[i - 1]);
        if s[i] < TAIL_THRESHOLD {
            return Ok(total);
        }
    }
    Err(Error::numerical(
        MODULE,
        format!("survival is still {:.3e} at the horizon {}; use a larger horizon", s[s.len() - 1], g[g.len() - 1]),
    ))
}

/// Full prediction for one unit at decision time `t_star`.
///
/// The horizon is doubled (up to `max_horizon_doublings` times) until the
/// marginal curve decays below the tail threshold. The RUL comes from that
/// curve; with `trim_tail` the reported curves are then recomputed on a grid
/// ending where the marginal point first drops below the threshold.
pub fn predict_unit(model: &FittedModel, view: &UnitView, t_star: f64, config: &PredictConfig, seed: u64) -> Result<PredictionResult> {
    config.validate()?;
    let smoothing = personalize(model, view)?;
    let mode_post = mode_posterior(model, view, &smoothing, None)?;
    let mut horizon = config.horizon_for(model, t_star);
    let mut attempt = 0;
    loop {
        let conditional = (0..model.meta.n_modes)
            .into_par_iter()
            .map(|k| conditional_survival(model, k, view, &smoothing[k], t_star, horizon, config, seed))
            .collect::<Result<Vec<_>>>()?;
        let mix_seed = derive_seed(seed, &[view.id as u64, t_star.to_bits()]);
        let marginal = marginal_survival(&conditional, &mode_post.probs, config.band_level, mix_seed)?;
        match rul_estimate(&marginal) {
            Ok(rul) => {
                let cut = marginal.point.iter().position(|s| *s < TAIL_THRESHOLD).expect("the RUL integral reached the tail");
                let trimmed = marginal.grid[cut].max(10.0 * model.meta.integration_step);
                if !config.trim_tail || config.horizon.is_some() || trimmed >= horizon {
                    return Ok(PredictionResult { unit_id: view.id, t_star, mode_posterior: mode_post, conditional, marginal, rul });
                }
                let conditional = (0..model.meta.n_modes)
                    .into_par_iter()
                    .map(|k| conditional_survival(model, k, view, &smoothing[k], t_star, trimmed, config, seed))
                    .collect::<Result<Vec<_>>>()?;
                let marginal = marginal_survival(&conditional, &mode_post.probs, config.band_level, mix_seed)?;
                return Ok(PredictionResult { unit_id: view.id, t_star, mode_posterior: mode_post, conditional, marginal, rul });
            }
            Err(e) if attempt >= config.max_horizon_doublings => {
                return Err(Error::numerical(MODULE, format!("unit {}: {e}", view.id)));
            }
            Err(_) => {
                attempt += 1;
                horizon *= 2.0;
            }
        }
    }
}
