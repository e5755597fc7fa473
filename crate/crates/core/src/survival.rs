//! Cox proportional hazards with an exponential baseline `h0(t) = exp(b + rho t)`.
//!
//! Time-varying covariates enter through a [`SignalPath`]: the sensor signals
//! evaluated on an integration grid. Hazard integrals use the trapezoid rule
//! on that grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "survival";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxBaselineParams {
    pub b: f64,
    pub rho: f64,
}

impl CoxBaselineParams {
    pub fn new(b: f64, rho: f64) -> Result<Self> {
        if !b.is_finite() || !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::contract(MODULE, format!("invalid baseline b={b}, rho={rho}")));
        }
        Ok(Self { b, rho })
    }
}

/// Static-covariate weights `gamma` and per-sensor weights `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxCoefficients {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl CoxCoefficients {
    pub fn zeros(n_covariates: usize, n_sensors: usize) -> Self {
        Self { gamma: vec![0.0; n_covariates], beta: vec![0.0; n_sensors] }
    }

    /// `gamma^T x`; an empty covariate vector contributes zero.
    pub fn static_term(&self, x: &[f64]) -> Result<f64> {
        if x.is_empty() {
            return Ok(0.0);
        }
        if x.len() != self.gamma.len() {
            return Err(Error::contract(
                MODULE,
                format!("{} covariates supplied for {} coefficients", x.len(), self.gamma.len()),
            ));
        }
        Ok(self.gamma.iter().zip(x).map(|(g, v)| g * v).sum())
    }

    fn signal_term(&self, f: &[f64]) -> f64 {
        self.beta.iter().zip(f).map(|(b, v)| b * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Event time `V = min(T, C)`.
    pub time: f64,
    /// `true` for an observed failure, `false` when censored.
    pub failed: bool,
    pub covariates: Vec<f64>,
}

impl EventRecord {
    pub fn new(time: f64, failed: bool, covariates: Vec<f64>) -> Result<Self> {
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::contract(MODULE, format!("event time must be positive, got {time}")));
        }
        Ok(Self { time, failed, covariates })
    }
}

/// Sensor signals on a time grid, stored row-major (one row per grid time).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    times: Vec<f64>,
    values: Vec<f64>,
    n_sensors: usize,
}

impl SignalPath {
    /// Builds a path from one value vector per sensor.
    pub fn from_sensors(times: Vec<f64>, sensors: &[Vec<f64>]) -> Result<Self> {
        if sensors.iter().any(|s| s.len() != times.len()) {
            return Err(Error::contract(MODULE, "every sensor needs one value per grid time"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract(MODULE, "path grid must be strictly increasing"));
        }
        let n_sensors = sensors.len();
        let mut values = Vec::with_capacity(times.len() * n_sensors);
        for i in 0..times.len() {
            values.extend(sensors.iter().map(|s| s[i]));
        }
        Ok(Self { times, values, n_sensors })
    }

    /// A path with all signals identically zero.
    pub fn zeros(times: Vec<f64>, n_sensors: usize) -> Result<Self> {
        let n = times.len();
        Self::from_sensors(times, &vec![vec![0.0; n]; n_sensors])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_sensors..(i + 1) * self.n_sensors]
    }

    /// Linearly interpolated signals at `t`.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] - 1e-9 || t > self.times[n - 1] + 1e-9 {
            return Err(Error::contract(MODULE, format!("time {t} lies outside the signal path grid")));
        }
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return Ok(self.row(0).to_vec());
        }
        if i >= n {
            return Ok(self.row(n - 1).to_vec());
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.row(i - 1).iter().zip(self.row(i)).map(|(a, b)| a + w * (b - a)).collect())
    }
}

/// Uniform grid from `start` to `end` with the given step; `end` is always the last node.
pub fn integration_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && end >= start);
    let n = ((end - start) / step).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| start + k as f64 * step).collect();
    let last = *grid.last().unwrap();
    if end - last > 1e-9 * step.max(end.abs()) {
        grid.push(end);
    } else {
        *grid.last_mut().unwrap() = end;
    }
    grid
}

fn check_dims(coef: &CoxCoefficients, f: &[f64]) -> Result<()> {
    if f.len() != coef.beta.len() {
        return Err(Error::contract(MODULE, format!("{} sensor values for {} coefficients", f.len(), coef.beta.len())));
    }
    Ok(())
}

pub fn log_hazard(t: f64, base: CoxBaselineParams, coef: &CoxCoefficients, x: &[f64], f_t: &[f64]) -> Result<f64> {
    check_dims(coef, f_t)?;
    Ok(base.b + base.rho * t + coef.static_term(x)? + coef.signal_term(f_t))
}

/// `h(t) = exp(b + rho t) exp(gamma^T x + sum_j beta_j f_j(t))`.
pub fn hazard(t: f64, base: CoxBaselineParams, coef: &CoxCoefficients, x: &[f64], f_t: &[f64]) -> Result<f64> {
    Ok(log_hazard(t, base, coef, x, f_t)?.exp())
}

/// Trapezoid approximation of `∫ h` over `[t_start, t_end]` on the path grid.
pub fn cumulative_hazard(
    t_start: f64,
    t_end: f64,
    base: CoxBaselineParams,
    coef: &CoxCoefficients,
    x: &[f64],
    path: &SignalPath,
) -> Result<f64> {
    if t_end < t_start {
        return Err(Error::contract(MODULE, format!("interval [{t_start}, {t_end}] is reversed")));
    }
    if t_end == t_start {
        return Ok(0.0);
    }
    check_dims(coef, path.row(0))?;
    let first = path.at(t_start)?;
    let last = path.at(t_end)?;
    let st = coef.static_term(x)?;
    let h = |t: f64, f: &[f64]| (base.b + base.rho * t + st + coef.signal_term(f)).exp();

    let times = path.times();
    let lo = times.partition_point(|&v| v <= t_start);
    let hi = times.partition_point(|&v| v < t_end);
    let mut prev_t = t_start;
    let mut prev_h = h(t_start, &first);
    let mut total = 0.0;
    for i in lo..hi {
        let hi_val = h(times[i], path.row(i));
        total += 0.5 * (times[i] - prev_t) * (prev_h + hi_val);
        prev_t = times[i];
        prev_h = hi_val;
    }
    total += 0.5 * (t_end - prev_t) * (prev_h + h(t_end, &last));
    Ok(total)
}

/// Probability of surviving `dt` more time units given survival to `t_star`.
pub fn survival_prob(
    t_star: f64,
    dt: f64,
    base: CoxBaselineParams,
    coef: &CoxCoefficients,
    x: &[f64],
    path: &SignalPath,
) -> Result<f64> {
    if dt < 0.0 {
        return Err(Error::contract(MODULE, format!("negative horizon {dt}")));
    }
    Ok((-cumulative_hazard(t_star, t_star + dt, base, coef, x, path)?).exp())
}

/// Cumulative hazard from the first grid node to every node of the path.
pub fn cumulative_hazard_profile(base: CoxBaselineParams, coef: &CoxCoefficients, x: &[f64], path: &SignalPath) -> Result<Vec<f64>> {
    check_dims(coef, path.row(0))?;
    let st = coef.static_term(x)?;
    let times = path.times();
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    let mut prev = f64::NAN;
    for (i, &t) in times.iter().enumerate() {
        let h = (base.b + base.rho * t + st + coef.signal_term(path.row(i))).exp();
        if i > 0 {
            acc += 0.5 * (t - times[i - 1]) * (prev + h);
        }
        out.push(acc);
        prev = h;
    }
    Ok(out)
}

/// `delta log h(V) - ∫_0^V h`: failures contribute the density, censored units the survival.
pub fn event_loglik(rec: &EventRecord, base: CoxBaselineParams, coef: &CoxCoefficients, path: &SignalPath) -> Result<f64> {
    let cum = cumulative_hazard(0.0, rec.time, base, coef, &rec.covariates, path)?;
    let log_h = if rec.failed {
        log_hazard(rec.time, base, coef, &rec.covariates, &path.at(rec.time)?)?
    } else {
        0.0
    };
    Ok(log_h - cum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_path(end: f64, step: f64) -> SignalPath {
        SignalPath::zeros(integration_grid(0.0, end, step), 0).unwrap()
    }

    fn none() -> CoxCoefficients {
        CoxCoefficients::zeros(0, 0)
    }

    fn base(b: f64, rho: f64) -> CoxBaselineParams {
        CoxBaselineParams::new(b, rho).unwrap()
    }

    #[test]
    fn hazard_examples() {
        let c = CoxCoefficients::zeros(1, 2);
        assert_eq!(hazard(7.0, base(0.0, 0.0), &c, &[1.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!((hazard(1.0, base(2f64.ln(), 0.0), &c, &[], &[0.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((hazard(10.0, base(0.0, 0.1), &c, &[], &[0.0, 0.0]).unwrap() - 1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn hazard_dimension_mismatch_is_an_error() {
        let c = CoxCoefficients::zeros(1, 2);
        assert!(hazard(1.0, base(0.0, 0.0), &c, &[], &[0.0]).is_err());
        assert!(hazard(1.0, base(0.0, 0.0), &c, &[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn cumulative_hazard_examples() {
        let p = zero_path(10.0, 0.01);
        assert_eq!(cumulative_hazard(3.0, 3.0, base(0.0, 0.1), &none(), &[], &p).unwrap(), 0.0);
        let v = cumulative_hazard(0.0, 10.0, base(0.0, 0.1), &none(), &[], &p).unwrap();
        assert!((v - (1f64.exp() - 1.0) / 0.1).abs() < 1e-3);
        let v = cumulative_hazard(2.0, 5.0, base(0.0, 0.0), &none(), &[], &p).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn uncovered_interval_is_an_error() {
        let p = zero_path(5.0, 0.5);
        assert!(cumulative_hazard(0.0, 6.0, base(0.0, 0.0), &none(), &[], &p).is_err());
        assert!(cumulative_hazard(2.0, 1.0, base(0.0, 0.0), &none(), &[], &p).is_err());
    }

    #[test]
    fn survival_examples() {
        let p = zero_path(10.0, 0.01);
        assert_eq!(survival_prob(1.0, 0.0, base(0.0, 0.0), &none(), &[], &p).unwrap(), 1.0);
        let s = survival_prob(1.0, 1.0, base(0.0, 0.0), &none(), &[], &p).unwrap();
        assert!((s - (-1f64).exp()).abs() < 1e-12);
        let s = survival_prob(1.0, 2.0, base(0.5f64.ln(), 0.0), &none(), &[], &p).unwrap();
        assert!((s - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn event_loglik_examples() {
        let p = zero_path(3.0, 0.01);
        let b = base(2f64.ln(), 0.0);
        let failed = EventRecord::new(3.0, true, vec![]).unwrap();
        let censored = EventRecord::new(3.0, false, vec![]).unwrap();
        assert!((event_loglik(&failed, b, &none(), &p).unwrap() - (2f64.ln() - 6.0)).abs() < 1e-12);
        assert!((event_loglik(&censored, b, &none(), &p).unwrap() + 6.0).abs() < 1e-12);
        let scaled = base(2f64.ln() + 3f64.ln(), 0.0);
        let v = event_loglik(&censored, scaled, &none(), &p).unwrap();
        assert!((v - 3.0 * -6.0).abs() < 1e-11);
    }

    #[test]
    fn trapezoid_converges_at_second_order() {
        let times = integration_grid(0.0, 8.0, 0.01);
        let f: Vec<f64> = times.iter().map(|t| (0.7 * t).sin()).collect();
        let coef = CoxCoefficients { gamma: vec![], beta: vec![0.8] };
        let b = base(-0.5, 0.2);
        let exact = {
            let p = SignalPath::from_sensors(times.clone(), &[f.clone()]).unwrap();
            cumulative_hazard(0.0, 8.0, b, &coef, &[], &p).unwrap()
        };
        let at = |step: f64| {
            let t = integration_grid(0.0, 8.0, step);
            let v: Vec<f64> = t.iter().map(|x| (0.7 * x).sin()).collect();
            let p = SignalPath::from_sensors(t, &[v]).unwrap();
            cumulative_hazard(0.0, 8.0, b, &coef, &[], &p).unwrap()
        };
        let (c1, c2, c3) = (at(0.4), at(0.2), at(0.1));
        let d1 = (c1 - c2).abs();
        let d2 = (c2 - c3).abs();
        assert!(d1 < 4.0 * d2 * 1.2 && d1 > 2.0 * d2, "d1={d1} d2={d2}");
        assert!((c3 - exact).abs() < d2);
    }

    proptest! {
        #[test]
        fn survival_is_non_increasing(b in -3.0..1.0f64, rho in 0.0..0.3f64, beta in -1.0..1.0f64,
                                      phase in 0.0..6.0f64, dts in proptest::collection::vec(0.0..9.0f64, 2..8)) {
            let times = integration_grid(0.0, 10.0, 0.05);
            let f: Vec<f64> = times.iter().map(|t| (t + phase).cos()).collect();
            let p = SignalPath::from_sensors(times, &[f]).unwrap();
            let c = CoxCoefficients { gamma: vec![], beta: vec![beta] };
            let mut dts = dts;
            dts.sort_by(f64::total_cmp);
            let s: Vec<f64> = dts.iter().map(|&d| survival_prob(0.5, d, base(b, rho), &c, &[], &p).unwrap()).collect();
            prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn censored_loglik_is_log_survival(b in -3.0..1.0f64, rho in 0.0..0.3f64, v in 0.5..9.5f64) {
            let times = integration_grid(0.0, 10.0, 0.05);
            let f: Vec<f64> = times.iter().map(|t| 0.1 * t).collect();
            let p = SignalPath::from_sensors(times, &[f]).unwrap();
            let c = CoxCoefficients { gamma: vec![], beta: vec![0.3] };
            let rec = EventRecord::new(v, false, vec![]).unwrap();
            let ll = event_loglik(&rec, base(b, rho), &c, &p).unwrap();
            let s = survival_prob(0.0, v, base(b, rho), &c, &[], &p).unwrap();
            prop_assert_eq!(ll.exp(), s);
        }
    }
}
