//! Synthetic degradation data with known ground truth.
//!
//! Sensor `j` of a unit in mode `k` follows `y(t) = Z_kj(t)^T B + noise` with
//! unit-specific Gaussian coefficients `B`. The unit fails according to the
//! hazard `exp(b_k + rho_k t + gamma_k^T x + sum_j beta_kj Z_kj(t)^T B_j)`,
//! drawn by rejection sampling. Because the noiseless signals are known, the
//! true conditional survival curve and RUL of every test unit can be evaluated.

mod dataset;
mod generate;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{make_dataset, view_file_name, RulAt, SimulatedData, Truth, TruthRecord};
pub use generate::{gen_failure_time, gen_signals, true_rul, true_survival, SimulatedUnit, TrueUnit};

pub(crate) const MODULE: &str = "simulate";

/// Fixed nonlinear forms the signal bases are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Basis {
    Constant,
    /// `t / scale`
    Linear { scale: f64 },
    /// `(t / scale)^exponent`
    Power { scale: f64, exponent: f64 },
    /// `1 - exp(-t / scale)`
    SatExp { scale: f64 },
    /// `exp(t / scale) - 1`
    Exponential { scale: f64 },
    /// `1 / (1 + exp(-(t - center) / width))`
    Logistic { center: f64, width: f64 },
}

impl Basis {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Basis::Constant => 1.0,
            Basis::Linear { scale } => t / scale,
            Basis::Power { scale, exponent } => (t / scale).powf(exponent),
            Basis::SatExp { scale } => -(-t / scale).exp_m1(),
            Basis::Exponential { scale } => (t / scale).exp_m1(),
            Basis::Logistic { center, width } => 1.0 / (1.0 + (-(t - center) / width).exp()),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let ok = match *self {
            Basis::Constant => true,
            Basis::Linear { scale } | Basis::SatExp { scale } | Basis::Exponential { scale } => scale > 0.0 && scale.is_finite(),
            Basis::Power { scale, exponent } => scale > 0.0 && scale.is_finite() && exponent > 0.0 && exponent.is_finite(),
            Basis::Logistic { center, width } => center.is_finite() && width > 0.0 && width.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid basis {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub basis: Vec<Basis>,
    pub coef_mean: Vec<f64>,
    /// Covariance of the unit coefficients; must be positive semi-definite.
    pub coef_cov: Vec<Vec<f64>>,
    pub noise_var: f64,
    /// Weight of this sensor's noiseless signal in the log-hazard.
    pub beta: f64,
}

impl SensorSpec {
    pub fn signal(&self, coef: &[f64], t: f64) -> f64 {
        self.basis.iter().zip(coef).map(|(z, c)| z.eval(t) * c).sum()
    }

    /// Square-root factor `L` with `L L^T = coef_cov`, from the eigendecomposition
    /// so that singular (e.g. zero) covariances are allowed.
    pub(crate) fn coef_factor(&self) -> Result<DMatrix<f64>> {
        let p = self.basis.len();
        if self.coef_mean.len() != p || self.coef_cov.len() != p || self.coef_cov.iter().any(|r| r.len() != p) {
            return Err(Error::contract(MODULE, format!("coefficient mean/covariance must match {p} basis functions")));
        }
        let c = DMatrix::from_fn(p, p, |i, j| self.coef_cov[i][j]);
        if (0..p).any(|i| (0..p).any(|j| (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * (1.0 + c[(i, j)].abs()))) {
            return Err(Error::contract(MODULE, "coefficient covariance must be symmetric"));
        }
        let eig = SymmetricEigen::new(c);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if eig.eigenvalues.iter().any(|v| *v < -1e-10 * scale || !v.is_finite()) {
            return Err(Error::contract(MODULE, "coefficient covariance is not positive semi-definite"));
        }
        let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    /// Baseline log-hazard intercept.
    pub b: f64,
    /// Baseline log-hazard slope.
    pub rho: f64,
    /// Static-covariate effects; the same length for every mode.
    #[serde(default)]
    pub gamma: Vec<f64>,
    pub sensors: Vec<SensorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensoringSpec {
    /// Rate of the exponential censoring time applied to training units.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_train_per_mode: usize,
    pub n_test_per_mode: usize,
    /// Spacing of the observation times `0, cadence, 2 cadence, ...`.
    pub cadence: f64,
    /// Failure times are drawn on `[0, t_max]`.
    pub t_max: f64,
    /// Decision times of the test views.
    pub t_stars: Vec<f64>,
    /// Trapezoid step for the true survival curve.
    pub truth_step: f64,
    pub censoring: Option<CensoringSpec>,
    pub modes: Vec<ModeSpec>,
}

/// Amplitude-dominated coefficient covariance `s^2 m m^T + d I`.
fn scaled_cov(mean: &[f64], s: f64, d: f64) -> Vec<Vec<f64>> {
    (0..mean.len())
        .map(|i| (0..mean.len()).map(|j| s * s * mean[i] * mean[j] + if i == j { d } else { 0.0 }).collect())
        .collect()
}

fn sensor(basis: Vec<Basis>, coef_mean: Vec<f64>, noise_var: f64, beta: f64) -> SensorSpec {
    SensorSpec { coef_cov: scaled_cov(&coef_mean, 0.3, 1e-4), basis, coef_mean, noise_var, beta }
}

impl Default for SimConfig {
    /// Two modes, two sensors, 50 + 50 training and 10 + 10 test units.
    ///
    /// Signals start below zero and cross it late in life, so the signal
    /// term of the log hazard is small on average and the intercept stays
    /// close to the default prior centre. The modes share their early
    /// trajectories: mode 1 then bends up polynomially, mode 2 exponentially
    /// on sensor 1 and through a logistic step on sensor 2.
    fn default() -> Self {
        let (linear, sat) = (Basis::Linear { scale: 65.0 }, Basis::SatExp { scale: 40.0 });
        let mode_1 = ModeSpec {
            b: -5.0,
            rho: 0.01,
            gamma: vec![],
            sensors: vec![
                sensor(vec![Basis::Constant, linear, Basis::Power { scale: 65.0, exponent: 2.0 }], vec![-2.5, 1.0, 0.5], 0.01, 1.0),
                sensor(vec![Basis::Constant, sat, linear], vec![-1.0, 1.0, 0.3], 0.01, 0.5),
            ],
        };
        let mode_2 = ModeSpec {
            b: -5.0,
            rho: 0.01,
            gamma: vec![],
            sensors: vec![
                sensor(vec![Basis::Constant, linear, Basis::Exponential { scale: 50.0 }], vec![-2.5, 1.0, 0.3], 0.01, 1.0),
                sensor(vec![Basis::Constant, sat, Basis::Logistic { center: 45.0, width: 6.0 }], vec![-1.0, 1.0, 1.0], 0.01, 0.5),
            ],
        };
        Self {
            n_train_per_mode: 50,
            n_test_per_mode: 10,
            cadence: 1.0,
            t_max: 300.0,
            t_stars: vec![20.0, 50.0, 75.0],
            truth_step: 0.01,
            censoring: None,
            modes: vec![mode_1, mode_2],
        }
    }
}

impl SimConfig {
    pub fn n_sensors(&self) -> usize {
        self.modes.first().map_or(0, |m| m.sensors.len())
    }

    pub fn n_covariates(&self) -> usize {
        self.modes.first().map_or(0, |m| m.gamma.len())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Error::config(MODULE, msg);
        if self.modes.is_empty() {
            return Err(cfg("at least one mode is required".into()));
        }
        if self.n_train_per_mode == 0 || self.n_test_per_mode == 0 {
            return Err(cfg("unit counts must be at least 1".into()));
        }
        if !(self.cadence > 0.0 && self.cadence.is_finite()) {
            return Err(cfg(format!("cadence must be positive, got {}", self.cadence)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(cfg(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.truth_step > 0.0 && self.truth_step <= 0.01) {
            return Err(cfg(format!("truth_step must lie in (0, 0.01], got {}", self.truth_step)));
        }
        if self.t_stars.is_empty() || self.t_stars.iter().any(|t| !(*t > 0.0 && *t < self.t_max)) {
            return Err(cfg(format!("t_stars must be non-empty and inside (0, t_max), got {:?}", self.t_stars)));
        }
        if let Some(c) = self.censoring {
            if !(c.rate > 0.0 && c.rate.is_finite()) {
                return Err(cfg(format!("censoring.rate must be positive, got {}", c.rate)));
            }
        }
        let (j, p) = (self.n_sensors(), self.n_covariates());
        if j == 0 {
            return Err(cfg("every mode needs at least one sensor".into()));
        }
        for (k, m) in self.modes.iter().enumerate() {
            let at = |msg: String| cfg(format!("modes[{k}]: {msg}"));
            if m.sensors.len() != j || m.gamma.len() != p {
                return Err(at("all modes need the same number of sensors and covariate effects".into()));
            }
            if !m.b.is_finite() || !(m.rho >= 0.0 && m.rho.is_finite()) || m.gamma.iter().any(|g| !g.is_finite()) {
                return Err(at(format!("invalid baseline b={}, rho={}", m.b, m.rho)));
            }
            for (s, spec) in m.sensors.iter().enumerate() {
                let at = |msg: String| cfg(format!("modes[{k}].sensors[{s}]: {msg}"));
                if spec.basis.is_empty() {
                    return Err(at("at least one basis function is required".into()));
                }
                for z in &spec.basis {
                    z.validate().map_err(at)?;
                }
                if !(spec.noise_var >= 0.0 && spec.noise_var.is_finite()) || !spec.beta.is_finite() {
                    return Err(at("noise_var must be non-negative and beta finite".into()));
                }
                spec.coef_factor().map_err(|e| at(e.to_string()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn basis_values() {
        assert_eq!(Basis::Constant.eval(3.0), 1.0);
        assert_eq!(Basis::Linear { scale: 2.0 }.eval(3.0), 1.5);
        assert!((Basis::Power { scale: 2.0, exponent: 2.0 }.eval(3.0) - 2.25).abs() < 1e-15);
        assert!((Basis::SatExp { scale: 1.0 }.eval(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(Basis::Logistic { center: 5.0, width: 1.0 }.eval(5.0), 0.5);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut c = SimConfig::default();
        let mut cov = vec![vec![0.0; 3]; 3];
        (cov[0][0], cov[0][1], cov[1][0], cov[1][1], cov[2][2]) = (1.0, 2.0, 2.0, 1.0, 1.0);
        c.modes[0].sensors[0].coef_cov = cov;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        assert!(matches!(c.modes[0].sensors[0].coef_factor(), Err(Error::Contract { .. })));
    }

    #[test]
    fn zero_covariance_factor_is_zero() {
        let mut s = SimConfig::default().modes[0].sensors[0].clone();
        s.coef_cov = vec![vec![0.0; s.basis.len()]; s.basis.len()];
        assert!(s.coef_factor().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = SimConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: SimConfig = toml::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
