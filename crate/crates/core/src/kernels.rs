//! Covariance functions of the convolved multi-output GP.
//!
//! A single latent process `u` with an RBF kernel is shared by all units of a
//! (failure mode, sensor) group. Each unit's signal is `f_i = G_i * u`, where
//! `G_i(t) = eta_i / sqrt(2 pi xi_i^2) exp(-t^2 / (2 xi_i^2))`. Convolving
//! Gaussians adds their variances, which gives the closed forms below.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length scale of the latent RBF process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentKernelParams {
    pub lambda: f64,
}

impl LatentKernelParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::contract("kernels", format!("length scale must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

/// Unit-specific Gaussian smoothing kernel: scale `eta` and width `xi`.
///
/// `xi = 0` is the delta-smoothing limit; `eta` may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernelParams {
    pub eta: f64,
    pub xi: f64,
}

impl SmoothingKernelParams {
    pub fn new(eta: f64, xi: f64) -> Result<Self> {
        if !eta.is_finite() || !(xi >= 0.0 && xi.is_finite()) {
            return Err(Error::contract("kernels", format!("invalid smoothing parameters eta={eta}, xi={xi}")));
        }
        Ok(Self { eta, xi })
    }
}

#[inline]
pub fn k_uu(t: f64, t_prime: f64, lk: LatentKernelParams) -> f64 {
    let d = t - t_prime;
    (-d * d / (2.0 * lk.lambda * lk.lambda)).exp()
}

/// Cross-covariance between a unit's signal at `t` and the latent process at `w`.
#[inline]
pub fn k_fu(t: f64, w: f64, lk: LatentKernelParams, sk: SmoothingKernelParams) -> f64 {
    let l2 = lk.lambda * lk.lambda;
    let s2 = l2 + sk.xi * sk.xi;
    let d = t - w;
    sk.eta * (l2 / s2).sqrt() * (-d * d / (2.0 * s2)).exp()
}

/// Covariance between two unit signals sharing the latent process.
#[inline]
pub fn k_ff(t: f64, t_prime: f64, lk: LatentKernelParams, sk_a: SmoothingKernelParams, sk_b: SmoothingKernelParams) -> f64 {
    let l2 = lk.lambda * lk.lambda;
    let s2 = l2 + sk_a.xi * sk_a.xi + sk_b.xi * sk_b.xi;
    let d = t - t_prime;
    sk_a.eta * sk_b.eta * (l2 / s2).sqrt() * (-d * d / (2.0 * s2)).exp()
}

/// Prior variance of a unit's signal at any single time.
#[inline]
pub fn k_ff_diag(lk: LatentKernelParams, sk: SmoothingKernelParams) -> f64 {
    k_ff(0.0, 0.0, lk, sk, sk)
}

/// `K_uu` over the inducing inputs.
pub fn gram_uu(w: &[f64], lk: LatentKernelParams) -> DMatrix<f64> {
    DMatrix::from_fn(w.len(), w.len(), |i, j| k_uu(w[i], w[j], lk))
}

/// `K_uf` (rows: inducing inputs, columns: signal times) for one unit.
pub fn cross_uf(w: &[f64], times: &[f64], lk: LatentKernelParams, sk: SmoothingKernelParams) -> DMatrix<f64> {
    DMatrix::from_fn(w.len(), times.len(), |q, n| k_fu(times[n], w[q], lk, sk))
}

/// `K_ff` between two time sets of units `a` and `b`.
pub fn gram_ff(
    times_a: &[f64],
    times_b: &[f64],
    lk: LatentKernelParams,
    sk_a: SmoothingKernelParams,
    sk_b: SmoothingKernelParams,
) -> DMatrix<f64> {
    DMatrix::from_fn(times_a.len(), times_b.len(), |i, j| k_ff(times_a[i], times_b[j], lk, sk_a, sk_b))
}

/// Partial derivatives of `k_fu` with respect to `(ln lambda, eta, ln xi)`.
#[inline]
pub(crate) fn k_fu_grad(t: f64, w: f64, lk: LatentKernelParams, sk: SmoothingKernelParams) -> (f64, [f64; 3]) {
    let lam = lk.lambda;
    let xi = sk.xi;
    let l2 = lam * lam;
    let x2 = xi * xi;
    let s2 = l2 + x2;
    let d2 = (t - w) * (t - w);
    let base = (l2 / s2).sqrt() * (-d2 / (2.0 * s2)).exp();
    let value = sk.eta * base;
    // d ln k / d ln lambda = 1 - l2/s2 + d2 l2 / s2^2
    let dlog_lam = 1.0 - l2 / s2 + d2 * l2 / (s2 * s2);
    // d ln k / d ln xi = -x2/s2 + d2 x2 / s2^2
    let dlog_xi = -x2 / s2 + d2 * x2 / (s2 * s2);
    (value, [value * dlog_lam, base, value * dlog_xi])
}

/// Partial derivatives of the prior signal variance w.r.t. `(ln lambda, eta, ln xi)`.
#[inline]
pub(crate) fn k_ff_diag_grad(lk: LatentKernelParams, sk: SmoothingKernelParams) -> (f64, [f64; 3]) {
    let l2 = lk.lambda * lk.lambda;
    let x2 = sk.xi * sk.xi;
    let s2 = l2 + 2.0 * x2;
    let base = (l2 / s2).sqrt();
    let value = sk.eta * sk.eta * base;
    let dlog_lam = 1.0 - l2 / s2;
    let dlog_xi = -2.0 * x2 / s2;
    (value, [value * dlog_lam, 2.0 * sk.eta * base, value * dlog_xi])
}

/// Derivative of `k_uu` with respect to `ln lambda`.
#[inline]
pub(crate) fn k_uu_dlog_lambda(t: f64, t_prime: f64, lk: LatentKernelParams) -> f64 {
    let d2 = (t - t_prime) * (t - t_prime);
    let l2 = lk.lambda * lk.lambda;
    k_uu(t, t_prime, lk) * d2 / l2
}
