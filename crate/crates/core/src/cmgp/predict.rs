//! Predictive distributions for a unit's signal given a fitted group model.
//!
//! Given the historical posterior `u ~ N(m, S)`, a unit's latent signal at
//! times `X` is Gaussian with mean `P_X m` and covariance
//! `K_XX - Q_XX + P_X S P_X^T`, where `P_X = K_Xu K_uu^{-1}` and
//! `Q_XX = P_X K_uX`. The unit's own noisy observations are then conditioned
//! on exactly (dense, since a single unit has few points).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;

use super::{CmgpModel, SignalPosterior, MODULE};
use crate::data::Series;
use crate::error::{Error, Result};
use crate::kernels::{self, SmoothingKernelParams};
use crate::linalg::{cholesky, gaussian_logpdf, sample_gaussian, symmetrize, Jitter};
use crate::optim::{nelder_mead_maximize, NelderMeadOptions};
use crate::rng::StreamRng;

/// Mean and covariance of the signal at `times` before seeing the unit's own data.
fn prior_moments(model: &CmgpModel, sk: SmoothingKernelParams, times: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let lk = model.hyper.latent;
    let w = model.grid.points();
    let l = cholesky(&kernels::gram_uu(w, lk), Jitter::Always, MODULE, "K_uu")?;
    let v = l.solve_lower(&kernels::cross_uf(w, times, lk, sk));
    // P_X^T = L^{-T} V
    let pt = l.solve_upper(&v);
    let mean = pt.transpose() * model.u_mean();
    let mut cov = kernels::gram_ff(times, times, lk, sk, sk) - v.transpose() * &v + pt.transpose() * model.u_cov() * &pt;
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Predictive distribution of a unit's latent signal at `eval_times`.
///
/// With `new_data`, the unit's own observations are conditioned on; without,
/// this is the predictive induced by the historical posterior alone.
pub fn predict_f(
    model: &CmgpModel,
    unit_smoothing: SmoothingKernelParams,
    new_data: Option<&Series>,
    eval_times: &[f64],
) -> Result<SignalPosterior> {
    if eval_times.is_empty() {
        return Err(Error::contract(MODULE, "predict_f needs at least one evaluation time"));
    }
    let obs = new_data.filter(|s| !s.is_empty());
    let Some(obs) = obs else {
        let (mean, cov) = prior_moments(model, unit_smoothing, eval_times)?;
        return Ok(SignalPosterior { times: eval_times.to_vec(), mean, cov });
    };
    let n_o = obs.len();
    let n_x = eval_times.len();
    let all: Vec<f64> = obs.times.iter().chain(eval_times).copied().collect();
    let (mean, cov) = prior_moments(model, unit_smoothing, &all)?;
    let mut c_oo = cov.view((0, 0), (n_o, n_o)).into_owned();
    for i in 0..n_o {
        c_oo[(i, i)] += model.hyper.noise_var;
    }
    let factor = cholesky(&c_oo, Jitter::IfNeeded, MODULE, "observation covariance")?;
    let c_ox = cov.view((0, n_o), (n_o, n_x)).into_owned();
    let resid = DVector::from_column_slice(&obs.values) - mean.rows(0, n_o);
    let a = factor.solve_lower(&c_ox);
    let r = factor.solve_lower_vec(&resid);
    let post_mean = mean.rows(n_o, n_x) + a.transpose() * r;
    let mut post_cov = cov.view((n_o, n_o), (n_x, n_x)) - a.transpose() * &a;
    symmetrize(&mut post_cov);
    Ok(SignalPosterior { times: eval_times.to_vec(), mean: post_mean, cov: post_cov })
}

/// Log marginal density of a unit's noisy observations under the group model.
pub fn predictive_logdensity(model: &CmgpModel, unit_smoothing: SmoothingKernelParams, obs: &Series) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let (mean, mut cov) = prior_moments(model, unit_smoothing, &obs.times)?;
    for i in 0..obs.len() {
        cov[(i, i)] += model.hyper.noise_var;
    }
    gaussian_logpdf(&DVector::from_column_slice(&obs.values), &mean, &cov, MODULE)
}

/// Joint draws (rows) of the latent signal at `grid_times`.
pub fn sample_f_paths(
    model: &CmgpModel,
    unit_smoothing: SmoothingKernelParams,
    new_data: Option<&Series>,
    grid_times: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if n_samples == 0 {
        return Err(Error::contract(MODULE, "n_samples must be at least 1"));
    }
    let post = predict_f(model, unit_smoothing, new_data, grid_times)?;
    let factor = cholesky(&post.cov, Jitter::IfNeeded, MODULE, "predictive covariance")?;
    let mut rng = StreamRng::seed_from_u64(seed);
    Ok(sample_gaussian(&post.mean, &factor.l(), n_samples, &mut rng))
}

/// Smoothing parameters for a unit the model was not trained on.
///
/// Starts from the mean of the trained units' parameters and maximizes the
/// predictive log-density of `obs`, keeping `(eta, ln xi)` inside the range
/// spanned by the trained units.
pub fn fit_unit_smoothing(model: &CmgpModel, obs: &Series) -> Result<SmoothingKernelParams> {
    let start = model.hyper.mean_smoothing();
    if obs.is_empty() || model.hyper.smoothing.is_empty() {
        return Ok(start);
    }
    let etas = model.hyper.smoothing.values().map(|s| s.eta);
    let lxis = model.hyper.smoothing.values().map(|s| s.xi.max(1e-12).ln());
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let pad = 1e-3 * (1.0 + lo.abs().max(hi.abs()));
        (lo - pad, hi + pad)
    };
    let (eta_lo, eta_hi) = range(&mut etas.into_iter());
    let (lxi_lo, lxi_hi) = range(&mut lxis.into_iter());
    let x0 = [start.eta.clamp(eta_lo, eta_hi), start.xi.max(1e-12).ln().clamp(lxi_lo, lxi_hi)];
    let steps = [0.25 * (eta_hi - eta_lo), 0.25 * (lxi_hi - lxi_lo)];
    let objective = |x: &[f64]| -> f64 {
        if x[0] < eta_lo || x[0] > eta_hi || x[1] < lxi_lo || x[1] > lxi_hi {
            return f64::NEG_INFINITY;
        }
        predictive_logdensity(model, SmoothingKernelParams { eta: x[0], xi: x[1].exp() }, obs).unwrap_or(f64::NEG_INFINITY)
    };
    let opts = NelderMeadOptions { max_evals: 200, f_tol: 1e-6, x_tol: 1e-6, restarts: 1 };
    let res = nelder_mead_maximize(objective, &x0, &steps, opts)?;
    Ok(SmoothingKernelParams { eta: res.x[0], xi: res.x[1].exp() })
}
