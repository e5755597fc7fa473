//! Mean-field variational inference for the Bayesian Cox part of the model.
//!
//! Per failure mode the intercept `b ~ N`, the baseline slope `rho ~ Gamma`,
//! and the mode probabilities `Pi ~ Dirichlet` get variational factors from the
//! same families as their priors; the Cox coefficients are point parameters.
//! Signal paths enter through samples from each unit's CMGP posterior.

mod elbo;
mod fit;
mod kl;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmgp::{fit_group, predict_f, CmgpFitConfig, CmgpFitReport, CmgpModel, SignalPosterior};
use crate::data::{Dataset, Series};
use crate::error::{Error, Result};
use crate::survival::{integration_grid, CoxCoefficients, EventRecord};

pub use elbo::{draw_paths, elbo_estimate, PathDraws, RhoMoments};
pub use fit::{fit, InferenceConfig, InferenceReport, ModeFitReport};
pub use kl::{dirichlet_conjugate_update, kl_dirichlet, kl_gamma, kl_normal};

pub(crate) const MODULE: &str = "inference";

/// Version tag written into every fitted-model document.
pub const MODEL_FORMAT_VERSION: &str = "gpcox-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub var: f64,
}

/// Gamma distribution in the shape–rate convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePrior {
    pub b: NormalParams,
    pub rho: GammaParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub modes: Vec<ModePrior>,
    pub alpha: Vec<f64>,
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        if self.modes.len() != self.alpha.len() || self.modes.is_empty() {
            return Err(Error::contract(MODULE, "one prior per mode and one Dirichlet entry per mode are required"));
        }
        for m in &self.modes {
            let ok = m.b.var > 0.0 && m.b.mean.is_finite() && m.rho.shape > 0.0 && m.rho.rate > 0.0;
            if !ok || !m.b.var.is_finite() || !m.rho.shape.is_finite() || !m.rho.rate.is_finite() {
                return Err(Error::contract(MODULE, format!("invalid mode prior {m:?}")));
            }
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::contract(MODULE, "Dirichlet concentrations must be positive"));
        }
        Ok(())
    }
}

/// Prior hyperparameters shared by all modes; the intercept mean defaults to a
/// per-mode constant-hazard estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub b_mean: Option<f64>,
    pub b_var: f64,
    pub rho_shape: f64,
    pub rho_rate: f64,
    pub dirichlet_alpha: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { b_mean: None, b_var: 1.0, rho_shape: 2.0, rho_rate: 200.0, dirichlet_alpha: 1.0 }
    }
}

impl PriorConfig {
    pub fn priors_for(&self, dataset: &Dataset, n_modes: usize) -> Result<Priors> {
        let modes = (0..n_modes)
            .map(|k| {
                let mean = match self.b_mean {
                    Some(m) => m,
                    None => {
                        let failures = dataset.units_of_mode(k).filter(|u| u.event.failed).count() as f64;
                        let exposure: f64 = dataset.units_of_mode(k).map(|u| u.event.time).sum();
                        (failures.max(0.5) / exposure.max(f64::MIN_POSITIVE)).ln()
                    }
                };
                ModePrior {
                    b: NormalParams { mean, var: self.b_var },
                    rho: GammaParams { shape: self.rho_shape, rate: self.rho_rate },
                }
            })
            .collect();
        let priors = Priors { modes, alpha: vec![self.dirichlet_alpha; n_modes] };
        priors.validate().map_err(|e| Error::config(MODULE, e.to_string()))?;
        Ok(priors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub b: NormalParams,
    pub rho: GammaParams,
    pub coef: CoxCoefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub alpha: Vec<f64>,
    pub modes: Vec<ModeState>,
}

impl VariationalState {
    /// Posterior mean of the mode probabilities.
    pub fn mode_prior(&self) -> Vec<f64> {
        let s: f64 = self.alpha.iter().sum();
        self.alpha.iter().map(|a| a / s).collect()
    }
}

/// A training unit's event record with its latent-signal posteriors on a grid covering `[0, V]`.
#[derive(Debug, Clone)]
pub struct UnitSignals {
    pub id: u32,
    pub mode: usize,
    pub record: EventRecord,
    /// One posterior per sensor, all on the same time grid.
    pub sensors: Vec<SignalPosterior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_modes: usize,
    pub n_sensors: usize,
    pub n_covariates: usize,
    pub max_event_time: f64,
    pub units_per_mode: Vec<usize>,
    /// Step of the hazard-integration grid.
    pub integration_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub version: String,
    pub meta: TrainingMeta,
    pub priors: Priors,
    pub state: VariationalState,
    /// Mode-major: entry `k * n_sensors + j` models sensor `j` under mode `k`.
    pub cmgp: Vec<CmgpModel>,
}

impl FittedModel {
    pub fn cmgp(&self, mode: usize, sensor: usize) -> &CmgpModel {
        &self.cmgp[mode * self.meta.n_sensors + sensor]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: FittedModel =
            serde_json::from_str(s).map_err(|e| Error::data(MODULE, format!("invalid fitted-model document: {e}")))?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::data(MODULE, format!("unsupported model version {:?}", model.version)));
        }
        let m = &model.meta;
        let consistent = model.cmgp.len() == m.n_modes * m.n_sensors
            && model.state.modes.len() == m.n_modes
            && model.state.alpha.len() == m.n_modes
            && model.cmgp.iter().enumerate().all(|(i, c)| c.mode == i / m.n_sensors && c.sensor == i % m.n_sensors);
        if !consistent {
            return Err(Error::data(MODULE, "fitted-model document is internally inconsistent"));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub cmgp: CmgpFitConfig,
    pub inference: InferenceConfig,
    pub priors: PriorConfig,
    /// Number of trapezoid steps spanning the longest training event time.
    pub integration_steps: usize,
    /// Expected number of failure modes; every one must have training units.
    pub n_modes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cmgp: CmgpFitConfig::default(),
            inference: InferenceConfig::default(),
            priors: PriorConfig::default(),
            integration_steps: 200,
            n_modes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmgpEntryReport {
    pub mode: usize,
    pub sensor: usize,
    pub log_marginal: f64,
    pub fit: CmgpFitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub cmgp: Vec<CmgpEntryReport>,
    pub inference: InferenceReport,
}

/// Latent-signal posteriors of every training unit on its integration grid.
pub fn training_signals(dataset: &Dataset, cmgp: &[CmgpModel], step: f64) -> Result<Vec<UnitSignals>> {
    let j_count = dataset.n_sensors;
    dataset
        .units
        .par_iter()
        .map(|u| {
            let mode = u.mode.ok_or_else(|| Error::data(MODULE, format!("training unit {} has no failure mode", u.id)))?;
            let grid = integration_grid(0.0, u.event.time, step);
            let sensors = (0..j_count)
                .map(|j| {
                    let model = &cmgp[mode * j_count + j];
                    let sk = model.hyper.smoothing_for(u.id)?;
                    predict_f(model, sk, None, &grid)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(UnitSignals { id: u.id, mode, record: u.event.clone(), sensors })
        })
        .collect()
}

/// Fits the CMGP models of every (mode, sensor) pair and then the variational posterior.
pub fn train(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<(FittedModel, TrainReport)> {
    if config.integration_steps < 2 {
        return Err(Error::config(MODULE, "integration_steps must be at least 2"));
    }
    let n_modes = config.n_modes.unwrap_or_else(|| dataset.n_modes());
    if n_modes == 0 || dataset.units.is_empty() {
        return Err(Error::data(MODULE, "the training set is empty"));
    }
    if let Some(u) = dataset.units.iter().find(|u| u.mode.is_none_or(|m| m >= n_modes)) {
        return Err(Error::data(MODULE, format!("training unit {} has a missing or unexpected failure mode", u.id)));
    }
    let units_per_mode: Vec<usize> = (0..n_modes).map(|k| dataset.units_of_mode(k).count()).collect();
    if let Some(k) = units_per_mode.iter().position(|&c| c == 0) {
        return Err(Error::data(MODULE, format!("failure mode {} has no training units", k + 1)));
    }
    let n_sensors = dataset.n_sensors;
    if n_sensors == 0 {
        return Err(Error::data(MODULE, "the training set has no sensor signals"));
    }
    let pairs: Vec<(usize, usize)> = (0..n_modes).flat_map(|k| (0..n_sensors).map(move |j| (k, j))).collect();
    let fitted: Vec<(CmgpModel, CmgpFitReport)> = pairs
        .par_iter()
        .map(|&(k, j)| {
            let group: Vec<(u32, Series)> = dataset.units_of_mode(k).map(|u| (u.id, u.signals[j].clone())).collect();
            fit_group(k, j, &group, &config.cmgp, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let (cmgp, reports): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

    let max_event_time = dataset.max_event_time();
    let step = max_event_time / config.integration_steps as f64;
    let signals = training_signals(dataset, &cmgp, step)?;
    let priors = config.priors.priors_for(dataset, n_modes)?;
    let (state, inference) = fit(&signals, &priors, dataset.n_covariates, n_sensors, &config.inference, seed)?;

    let report = TrainReport {
        cmgp: cmgp
            .iter()
            .zip(reports)
            .map(|(m, fit)| CmgpEntryReport { mode: m.mode, sensor: m.sensor, log_marginal: m.log_marginal, fit })
            .collect(),
        inference,
    };
    let model = FittedModel {
        version: MODEL_FORMAT_VERSION.to_string(),
        meta: TrainingMeta {
            n_modes,
            n_sensors,
            n_covariates: dataset.n_covariates,
            max_event_time,
            units_per_mode,
            integration_step: step,
        },
        priors,
        state,
        cmgp,
    };
    Ok((model, report))
}
