//! Sparse convolved multi-output GP for one (failure mode, sensor) group.
//!
//! All units of a group share one latent process `u`, summarised by its values
//! at a fixed inducing grid. Training maximizes the sparse marginal likelihood
//! over the latent length scale, the per-unit smoothing kernels and the noise
//! variance; the fitted model keeps the Gaussian posterior of the inducing
//! values, which is all prediction needs.

mod fit;
mod fitc;
mod predict;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{Error, Result};
use crate::kernels::{LatentKernelParams, SmoothingKernelParams};

pub use fit::{default_init, fit_group, fit_hyperparams, CmgpFitConfig, CmgpFitReport};
pub use fitc::{posterior_u, sparse_marginal_loglik};
pub use predict::{fit_unit_smoothing, predict_f, predictive_logdensity, sample_f_paths};

pub(crate) const MODULE: &str = "cmgp";

/// Observations of one sensor for every unit in a group, keyed by unit id.
pub type GroupData = [(u32, Series)];

/// Fixed pseudo-inputs of the latent process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InducingGrid(Vec<f64>);

impl InducingGrid {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::contract(MODULE, "an inducing grid needs at least two points"));
        }
        if w.windows(2).any(|p| p[1] <= p[0]) || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(MODULE, "inducing points must be finite and strictly increasing"));
        }
        Ok(Self(w))
    }

    /// `q` equally spaced points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, q: usize) -> Result<Self> {
        if q < 2 || !(end > start) {
            return Err(Error::contract(MODULE, format!("cannot place {q} inducing points on [{start}, {end}]")));
        }
        let step = (end - start) / (q - 1) as f64;
        Self::new((0..q).map(|i| start + i as f64 * step).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for InducingGrid {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<InducingGrid> for Vec<f64> {
    fn from(g: InducingGrid) -> Self {
        g.0
    }
}

/// Treatment of the residual covariance `K_ff - Q_ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparseMethod {
    /// Keep its diagonal (fully independent training conditional).
    #[default]
    Fitc,
    /// Drop it (deterministic training conditional).
    Dtc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmgpHyper {
    pub latent: LatentKernelParams,
    pub smoothing: BTreeMap<u32, SmoothingKernelParams>,
    pub noise_var: f64,
}

impl CmgpHyper {
    pub(crate) fn smoothing_for(&self, unit: u32) -> Result<SmoothingKernelParams> {
        self.smoothing
            .get(&unit)
            .copied()
            .ok_or_else(|| Error::contract(MODULE, format!("no smoothing kernel for unit {unit}")))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        LatentKernelParams::new(self.latent.lambda)?;
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::contract(MODULE, format!("noise variance must be positive, got {}", self.noise_var)));
        }
        for s in self.smoothing.values() {
            SmoothingKernelParams::new(s.eta, s.xi)?;
        }
        Ok(())
    }

    /// Mean of the trained smoothing parameters; the starting point for a new unit.
    pub fn mean_smoothing(&self) -> SmoothingKernelParams {
        let n = self.smoothing.len().max(1) as f64;
        let eta = self.smoothing.values().map(|s| s.eta).sum::<f64>() / n;
        let xi = self.smoothing.values().map(|s| s.xi).sum::<f64>() / n;
        SmoothingKernelParams { eta, xi }
    }
}

/// A fitted group model: hyperparameters plus the posterior of the inducing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmgpModel {
    pub mode: usize,
    pub sensor: usize,
    pub method: SparseMethod,
    pub hyper: CmgpHyper,
    pub grid: InducingGrid,
    pub u_mean: Vec<f64>,
    pub u_cov: Vec<Vec<f64>>,
    /// Sparse marginal log-likelihood at the fitted hyperparameters.
    pub log_marginal: f64,
}

impl CmgpModel {
    pub fn new(
        mode: usize,
        sensor: usize,
        method: SparseMethod,
        hyper: CmgpHyper,
        grid: InducingGrid,
        u_mean: DVector<f64>,
        u_cov: DMatrix<f64>,
        log_marginal: f64,
    ) -> Result<Self> {
        let q = grid.len();
        if u_mean.len() != q || u_cov.nrows() != q || u_cov.ncols() != q {
            return Err(Error::contract(MODULE, "posterior moments do not match the inducing grid"));
        }
        if u_mean.iter().chain(u_cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical(MODULE, "posterior moments are not finite"));
        }
        Ok(Self {
            mode,
            sensor,
            method,
            hyper,
            grid,
            u_mean: u_mean.iter().copied().collect(),
            u_cov: (0..q).map(|i| u_cov.row(i).iter().copied().collect()).collect(),
            log_marginal,
        })
    }

    pub fn u_mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_mean)
    }

    pub fn u_cov(&self) -> DMatrix<f64> {
        let q = self.u_cov.len();
        DMatrix::from_fn(q, q, |i, j| self.u_cov[i][j])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::data(MODULE, format!("invalid model document: {e}")))
    }
}

/// Gaussian predictive distribution of a unit's latent signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPosterior {
    pub times: Vec<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}
