use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{SimConfig, MODULE};
use crate::data::Series;
use crate::error::{Error, Result};
use crate::rng::{stream, tag, StreamRng};

/// Intervals of the grid used to bound the failure-time density.
const ENVELOPE_GRID: usize = 20_000;
const MAX_REJECTIONS: usize = 1_000_000;
/// Survival beyond `t_max` larger than this means `t_max` is too small.
const MAX_TAIL_MASS: f64 = 1e-3;

/// Ground truth of one unit: its mode, signal coefficients and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueUnit {
    pub id: u32,
    pub mode: usize,
    /// `coefficients[j]` multiplies the basis of sensor `j`.
    pub coefficients: Vec<Vec<f64>>,
    pub covariates: Vec<f64>,
}

impl TrueUnit {
    /// Noiseless signal of sensor `j` at time `t`.
    pub fn signal(&self, config: &SimConfig, j: usize, t: f64) -> f64 {
        config.modes[self.mode].sensors[j].signal(&self.coefficients[j], t)
    }

    pub fn log_hazard(&self, config: &SimConfig, t: f64) -> f64 {
        let m = &config.modes[self.mode];
        let x: f64 = m.gamma.iter().zip(&self.covariates).map(|(g, x)| g * x).sum();
        let f: f64 = m.sensors.iter().zip(&self.coefficients).map(|(s, c)| s.beta * s.signal(c, t)).sum();
        m.b + m.rho * t + x + f
    }

    pub fn hazard(&self, config: &SimConfig, t: f64) -> f64 {
        self.log_hazard(config, t).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUnit {
    pub truth: TrueUnit,
    /// Noisy observations of every sensor at `0, cadence, ...` up to `t_max`.
    pub observations: Vec<Series>,
}

/// Draws coefficients, covariates and noisy signals for units `ids` of `mode`.
///
/// Each unit uses its own seeded streams, so the output does not depend on
/// how units are scheduled across threads.
pub fn gen_signals(config: &SimConfig, mode: usize, ids: &[u32], seed: u64) -> Result<Vec<SimulatedUnit>> {
    let spec = config.modes.get(mode).ok_or_else(|| Error::contract(MODULE, format!("mode {} is not configured", mode + 1)))?;
    let factors = spec.sensors.iter().map(|s| s.coef_factor()).collect::<Result<Vec<_>>>()?;
    if !(config.cadence > 0.0) {
        return Err(Error::contract(MODULE, "cadence must be positive"));
    }
    let n_obs = (config.t_max / config.cadence).floor() as usize + 1;
    let times: Vec<f64> = (0..n_obs).map(|i| i as f64 * config.cadence).collect();
    Ok(ids
        .par_iter()
        .map(|&id| {
            let mut rng = stream(seed, &[tag::COEFFICIENTS, id as u64]);
            let coefficients: Vec<Vec<f64>> = spec
                .sensors
                .iter()
                .zip(&factors)
                .map(|(s, l)| {
                    let z = DVector::from_fn(s.basis.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let b = l * z;
                    s.coef_mean.iter().zip(b.iter()).map(|(m, d)| m + d).collect()
                })
                .collect();
            let mut rng = stream(seed, &[tag::COVARIATES, id as u64]);
            let covariates = (0..spec.gamma.len()).map(|_| rng.sample(StandardNormal)).collect();
            let truth = TrueUnit { id, mode, coefficients, covariates };
            let mut rng = stream(seed, &[tag::SIGNALS, id as u64]);
            let observations = spec
                .sensors
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    let sd = s.noise_var.sqrt();
                    let values = times.iter().map(|t| truth.signal(config, j, *t) + sd * rng.sample::<f64, _>(StandardNormal)).collect();
                    Series { times: times.clone(), values }
                })
                .collect();
            SimulatedUnit { truth, observations }
        })
        .collect())
}

/// One failure time from the density `h(t) exp(-∫_0^t h)` restricted to `(after, t_max]`.
///
/// Uniform proposals on `(after, t_max]` are accepted under an envelope of
/// 1.1 times the largest density found on a fine grid.
pub fn gen_failure_time(hazard: impl Fn(f64) -> f64, after: f64, t_max: f64, seed: u64) -> Result<f64> {
    if !(t_max > 0.0 && after >= 0.0 && after < t_max) {
        return Err(Error::contract(MODULE, format!("need 0 <= after < t_max, got after={after}, t_max={t_max}")));
    }
    let dt = t_max / ENVELOPE_GRID as f64;
    let h: Vec<f64> = (0..=ENVELOPE_GRID).map(|i| hazard(i as f64 * dt)).collect();
    // An infinite hazard is allowed once survival has underflowed to zero.
    if h.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::contract(MODULE, "hazard must be non-negative on [0, t_max]"));
    }
    let mut cum = vec![0.0; ENVELOPE_GRID + 1];
    for i in 1..=ENVELOPE_GRID {
        cum[i] = cum[i - 1] + 0.5 * dt * (h[i - 1] + h[i]);
    }
    let tail = (-cum[ENVELOPE_GRID]).exp();
    if tail > MAX_TAIL_MASS {
        return Err(Error::config(MODULE, format!("survival at t_max = {t_max} is {tail:.3e}; increase t_max")));
    }
    let density_at = |ht: f64, cum: f64| if cum.is_finite() { ht * (-cum).exp() } else { 0.0 };
    let density = |t: f64| -> f64 {
        let i = ((t / dt).floor() as usize).min(ENVELOPE_GRID - 1);
        let ht = hazard(t);
        density_at(ht, cum[i] + 0.5 * (t - i as f64 * dt) * (h[i] + ht))
    };
    let first = (after / dt).floor() as usize;
    let peak = (first..=ENVELOPE_GRID).map(|i| density_at(h[i], cum[i])).fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::numerical(MODULE, format!("failure-time density vanishes on ({after}, {t_max}]")));
    }
    let envelope = 1.1 * peak;
    let mut rng = StreamRng::seed_from_u64(seed);
    for _ in 0..MAX_REJECTIONS {
        let t = after + (t_max - after) * rng.random::<f64>();
        if t > after && rng.random::<f64>() * envelope < density(t) {
            return Ok(t);
        }
    }
    Err(Error::numerical(MODULE, format!("rejection sampling failed after {MAX_REJECTIONS} proposals")))
}

/// True conditional survival `exp(-∫_{t*}^{t*+Δ} h)` at each offset `Δ` (sorted, non-negative).
pub fn true_survival(config: &SimConfig, unit: &TrueUnit, t_star: f64, offsets: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(offsets.len());
    let mut cum = 0.0;
    let mut t = t_star;
    let mut h_prev = unit.hazard(config, t);
    for &d in offsets {
        let end = t_star + d;
        let n = ((end - t) / step).ceil().max(0.0) as usize;
        if n > 0 {
            let width = (end - t) / n as f64;
            for i in 1..=n {
                let ti = if i == n { end } else { t + width * i as f64 };
                let hi = unit.hazard(config, ti);
                cum += 0.5 * width * (h_prev + hi);
                h_prev = hi;
            }
            t = end;
        }
        out.push((-cum).exp());
    }
    out
}

/// True expected remaining life after `t_star`: `∫_0^∞ S(t* + Δ | t*) dΔ`.
pub fn true_rul(config: &SimConfig, unit: &TrueUnit, t_star: f64, step: f64) -> Result<f64> {
    let max_steps = (100.0 * config.t_max / step).ceil() as usize;
    let (mut cum, mut rul) = (0.0, 0.0);
    let mut s_prev = 1.0;
    let mut h_prev = unit.hazard(config, t_star);
    for i in 1..=max_steps {
        let h = unit.hazard(config, t_star + i as f64 * step);
        cum += 0.5 * step * (h_prev + h);
        h_prev = h;
        let s = (-cum).exp();
        rul += 0.5 * step * (s_prev + s);
        s_prev = s;
        if s < 1e-12 {
            return Ok(rul);
        }
    }
    Err(Error::numerical(MODULE, format!("unit {}: true survival does not decay after t*={t_star}", unit.id)))
}
