//! Sparse marginal likelihood, its gradient, and the inducing-value posterior.
//!
//! With `K_uu = L L^T`, `V = L^{-1} K_uf` and the diagonal
//! `Lambda = diag(K_ff - V^T V) + sigma^2` (FITC) or `sigma^2 I` (DTC), the
//! sparse covariance is `V^T V + Lambda` and everything reduces to the
//! well-conditioned `Q x Q` matrix `B = I + V Lambda^{-1} V^T`.

use nalgebra::{DMatrix, DVector};

use super::{CmgpHyper, GroupData, InducingGrid, SparseMethod, MODULE};
use crate::error::{Error, Result};
use crate::kernels::{self, LatentKernelParams, SmoothingKernelParams};
use crate::linalg::{cholesky, Factor, Jitter};

/// Observations of a group flattened into one vector, remembering each point's unit.
pub(crate) struct Flat {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub owner: Vec<usize>,
    pub units: Vec<u32>,
}

impl Flat {
    pub fn new(data: &GroupData) -> Self {
        let mut flat = Flat { times: Vec::new(), values: Vec::new(), owner: Vec::new(), units: Vec::new() };
        for (i, (id, s)) in data.iter().enumerate() {
            flat.units.push(*id);
            flat.times.extend_from_slice(&s.times);
            flat.values.extend_from_slice(&s.values);
            flat.owner.extend(std::iter::repeat_n(i, s.len()));
        }
        flat
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }
}

/// Unconstrained parameter vector: `[ln lambda, ln sigma^2, (eta_i, ln xi_i)...]`.
pub(crate) fn pack(hyper: &CmgpHyper, units: &[u32]) -> Result<Vec<f64>> {
    let mut theta = vec![hyper.latent.lambda.ln(), hyper.noise_var.ln()];
    for id in units {
        let s = hyper.smoothing_for(*id)?;
        theta.push(s.eta);
        theta.push(s.xi.max(1e-300).ln());
    }
    Ok(theta)
}

pub(crate) fn unpack(theta: &[f64], units: &[u32]) -> CmgpHyper {
    CmgpHyper {
        latent: LatentKernelParams { lambda: theta[0].exp() },
        noise_var: theta[1].exp(),
        smoothing: units
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, SmoothingKernelParams { eta: theta[2 + 2 * i], xi: theta[3 + 2 * i].exp() }))
            .collect(),
    }
}

struct State {
    kuu: DMatrix<f64>,
    l: Factor,
    a: DMatrix<f64>,
    v: DMatrix<f64>,
    lambda: DVector<f64>,
    /// Whether the FITC residual was positive (and so differentiable) at each point.
    active: Vec<bool>,
    lb: Factor,
    c: DVector<f64>,
    loglik: f64,
}

fn describe(hyper: &CmgpHyper) -> String {
    format!("lambda={:.4e}, noise_var={:.4e}", hyper.latent.lambda, hyper.noise_var)
}

fn build(flat: &Flat, smoothing: &[SmoothingKernelParams], hyper: &CmgpHyper, grid: &InducingGrid, method: SparseMethod) -> Result<State> {
    let w = grid.points();
    let q = w.len();
    let n = flat.len();
    let lk = hyper.latent;
    let kuu = kernels::gram_uu(w, lk);
    let l = cholesky(&kuu, Jitter::Always, MODULE, "K_uu").map_err(|e| match e {
        Error::Numerical { message, .. } => Error::numerical(MODULE, format!("{message} ({})", describe(hyper))),
        other => other,
    })?;
    let a = DMatrix::from_fn(q, n, |qi, ni| kernels::k_fu(flat.times[ni], w[qi], lk, smoothing[flat.owner[ni]]));
    let v = l.solve_lower(&a);
    let mut lambda = DVector::zeros(n);
    let mut active = vec![false; n];
    for ni in 0..n {
        let resid = match method {
            SparseMethod::Fitc => {
                let kff = kernels::k_ff_diag(lk, smoothing[flat.owner[ni]]);
                kff - v.column(ni).norm_squared()
            }
            SparseMethod::Dtc => 0.0,
        };
        active[ni] = method == SparseMethod::Fitc && resid > 0.0;
        lambda[ni] = resid.max(0.0) + hyper.noise_var;
    }
    let mut b = DMatrix::identity(q, q);
    let mut scaled = v.clone();
    for ni in 0..n {
        let s = 1.0 / lambda[ni];
        scaled.column_mut(ni).scale_mut(s);
    }
    b.gemm(1.0, &scaled, &v.transpose(), 1.0);
    let lb = cholesky(&b, Jitter::IfNeeded, MODULE, "I + V Lambda^-1 V^T").map_err(|e| match e {
        Error::Numerical { message, .. } => Error::numerical(MODULE, format!("{message} ({})", describe(hyper))),
        other => other,
    })?;
    let y = DVector::from_column_slice(&flat.values);
    let c = &scaled * &y;
    let e = lb.solve_lower_vec(&c);
    let quad = y.iter().zip(lambda.iter()).map(|(yi, li)| yi * yi / li).sum::<f64>() - e.norm_squared();
    let logdet = lb.log_det() + lambda.iter().map(|v| v.ln()).sum::<f64>();
    let loglik = -0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());
    if !loglik.is_finite() {
        return Err(Error::numerical(MODULE, format!("non-finite marginal likelihood ({})", describe(hyper))));
    }
    Ok(State { kuu, l, a, v, lambda, active, lb, c, loglik })
}

fn smoothing_list(flat: &Flat, hyper: &CmgpHyper) -> Result<Vec<SmoothingKernelParams>> {
    flat.units.iter().map(|id| hyper.smoothing_for(*id)).collect()
}

/// Sparse (FITC or DTC) log marginal likelihood of one group's observations.
pub fn sparse_marginal_loglik(data: &GroupData, hyper: &CmgpHyper, grid: &InducingGrid, method: SparseMethod) -> Result<f64> {
    hyper.validate()?;
    let flat = Flat::new(data);
    let smoothing = smoothing_list(&flat, hyper)?;
    Ok(build(&flat, &smoothing, hyper, grid, method)?.loglik)
}

/// Log-likelihood and its gradient with respect to the packed parameter vector.
pub(crate) fn loglik_and_grad(flat: &Flat, theta: &[f64], grid: &InducingGrid, method: SparseMethod) -> Result<(f64, Vec<f64>)> {
    let hyper = unpack(theta, &flat.units);
    let smoothing = smoothing_list(flat, &hyper)?;
    let st = build(flat, &smoothing, &hyper, grid, method)?;
    let w = grid.points();
    let q = w.len();
    let n = flat.len();
    let lk = hyper.latent;
    let fitc = method == SparseMethod::Fitc;

    let binv = st.lb.chol.inverse();
    let bc = &binv * &st.c;
    let y = DVector::from_column_slice(&flat.values);
    let vt_bc = st.v.transpose() * &bc;
    let alpha = DVector::from_fn(n, |i, _| (y[i] - vt_bc[i]) / st.lambda[i]);
    let mut r = st.v.clone();
    for ni in 0..n {
        r.column_mut(ni).scale_mut(1.0 / st.lambda[ni]);
    }
    let p = st.l.solve_upper(&st.v);
    let p_alpha = &p * &alpha;
    let t = st.l.solve_upper(&(DMatrix::identity(q, q) - &binv));
    let br = &binv * &r;
    // PM = (P alpha) alpha^T - P Lambda^{-1} + L^{-T} (I - B^{-1}) R
    let mut pm = &t * &r;
    for ni in 0..n {
        let inv = 1.0 / st.lambda[ni];
        for qi in 0..q {
            pm[(qi, ni)] += p_alpha[qi] * alpha[ni] - p[(qi, ni)] * inv;
        }
    }
    let m: Vec<f64> = (0..n)
        .map(|ni| alpha[ni] * alpha[ni] - 1.0 / st.lambda[ni] + r.column(ni).dot(&br.column(ni)))
        .collect();

    let mut g_a = pm.clone();
    let mut p_scaled = DMatrix::zeros(q, n);
    if fitc {
        for ni in 0..n {
            if st.active[ni] {
                for qi in 0..q {
                    g_a[(qi, ni)] -= m[ni] * p[(qi, ni)];
                    p_scaled[(qi, ni)] = m[ni] * p[(qi, ni)];
                }
            }
        }
    }
    let mut g_kuu = -(&pm * p.transpose());
    if fitc {
        g_kuu += &p_scaled * p.transpose();
    }
    g_kuu *= 0.5;

    let n_units = flat.units.len();
    let mut grad = vec![0.0; 2 + 2 * n_units];
    for ni in 0..n {
        let owner = flat.owner[ni];
        let sk = smoothing[owner];
        for qi in 0..q {
            let ga = g_a[(qi, ni)];
            if ga == 0.0 {
                continue;
            }
            let (_, d) = kernels::k_fu_grad(flat.times[ni], w[qi], lk, sk);
            grad[0] += ga * d[0];
            grad[2 + 2 * owner] += ga * d[1];
            grad[3 + 2 * owner] += ga * d[2];
        }
        if fitc && st.active[ni] {
            let gk = 0.5 * m[ni];
            let (_, d) = kernels::k_ff_diag_grad(lk, sk);
            grad[0] += gk * d[0];
            grad[2 + 2 * owner] += gk * d[1];
            grad[3 + 2 * owner] += gk * d[2];
        }
    }
    for qi in 0..q {
        for qj in 0..q {
            grad[0] += g_kuu[(qi, qj)] * kernels::k_uu_dlog_lambda(w[qi], w[qj], lk);
        }
    }
    grad[1] = 0.5 * m.iter().sum::<f64>() * hyper.noise_var;
    let _ = &st.kuu;
    let _ = &st.a;
    Ok((st.loglik, grad))
}

/// Gaussian posterior `N(mean, cov)` of the inducing values given a group's observations.
pub fn posterior_u(
    data: &GroupData,
    hyper: &CmgpHyper,
    grid: &InducingGrid,
    method: SparseMethod,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    hyper.validate()?;
    let flat = Flat::new(data);
    let smoothing = smoothing_list(&flat, hyper)?;
    let st = build(&flat, &smoothing, hyper, grid, method)?;
    let l = st.l.l();
    let e = st.lb.solve_lower_vec(&st.c);
    let mean = &l * st.lb.solve_upper_vec(&e);
    let wm = st.lb.solve_lower(&l.transpose());
    let mut cov = wm.transpose() * &wm;
    crate::linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Series;
    use crate::linalg::gaussian_logpdf;
    use std::collections::BTreeMap;

    fn hyper(lambda: f64, noise: f64, sk: &[(u32, f64, f64)]) -> CmgpHyper {
        CmgpHyper {
            latent: LatentKernelParams::new(lambda).unwrap(),
            noise_var: noise,
            smoothing: sk.iter().map(|&(id, e, x)| (id, SmoothingKernelParams::new(e, x).unwrap())).collect::<BTreeMap<_, _>>(),
        }
    }

    fn toy() -> (Vec<(u32, Series)>, CmgpHyper) {
        let mut data = Vec::new();
        for u in 0..3u32 {
            let times: Vec<f64> = (0..15).map(|k| k as f64 + 0.3 * u as f64).collect();
            let values: Vec<f64> = times.iter().map(|t| (0.4 * t + u as f64).sin() * (1.0 + 0.2 * u as f64)).collect();
            data.push((u + 1, Series::new(times, values).unwrap()));
        }
        (data, hyper(3.0, 0.05, &[(1, 1.0, 0.5), (2, 1.3, 1.0), (3, -0.7, 0.2)]))
    }

    /// Exact log-likelihood with the full dense covariance `K_ff + sigma^2 I`.
    fn dense_loglik(data: &[(u32, Series)], h: &CmgpHyper) -> f64 {
        let pts: Vec<(f64, SmoothingKernelParams, f64)> = data
            .iter()
            .flat_map(|(id, s)| {
                let sk = h.smoothing[id];
                s.times.iter().zip(&s.values).map(move |(t, y)| (*t, sk, *y))
            })
            .collect();
        let n = pts.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| kernels::k_ff(pts[i].0, pts[j].0, h.latent, pts[i].1, pts[j].1));
        for i in 0..n {
            k[(i, i)] += h.noise_var;
        }
        let y = DVector::from_iterator(n, pts.iter().map(|p| p.2));
        gaussian_logpdf(&y, &DVector::zeros(n), &k, "test").unwrap()
    }

    #[test]
    fn single_point_is_exact() {
        let h = hyper(2.0, 0.3, &[(9, 1.7, 0.8)]);
        let data = vec![(9, Series::new(vec![4.0], vec![0.0]).unwrap())];
        let grid = InducingGrid::uniform(0.0, 10.0, 5).unwrap();
        let got = sparse_marginal_loglik(&data, &h, &grid, SparseMethod::Fitc).unwrap();
        let v = kernels::k_ff_diag(h.latent, h.smoothing[&9]) + 0.3;
        let want = -0.5 * (2.0 * std::f64::consts::PI * v).ln();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn dense_grid_matches_exact_likelihood() {
        let (data, h) = toy();
        let grid = InducingGrid::uniform(0.0, 14.6, 200).unwrap();
        let sparse = sparse_marginal_loglik(&data, &h, &grid, SparseMethod::Fitc).unwrap();
        let exact = dense_loglik(&data, &h);
        assert!((sparse - exact).abs() < 1e-3, "{sparse} vs {exact}");
    }

    #[test]
    fn approaches_exact_likelihood_as_grid_grows() {
        let (data, h) = toy();
        let exact = dense_loglik(&data, &h);
        let errs: Vec<f64> = [5, 20, 80, 200]
            .iter()
            .map(|&q| {
                let grid = InducingGrid::uniform(0.0, 14.6, q).unwrap();
                (sparse_marginal_loglik(&data, &h, &grid, SparseMethod::Fitc).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{errs:?}");
        assert!(errs[3] < 1e-3);
    }

    #[test]
    fn noise_variance_matters() {
        let (data, h) = toy();
        let grid = InducingGrid::uniform(0.0, 14.6, 20).unwrap();
        let a = sparse_marginal_loglik(&data, &h, &grid, SparseMethod::Fitc).unwrap();
        let mut h2 = h.clone();
        h2.noise_var *= 2.0;
        let b = sparse_marginal_loglik(&data, &h2, &grid, SparseMethod::Fitc).unwrap();
        assert!(a != b);
    }

    #[test]
    fn missing_smoothing_entry_is_a_contract_error() {
        let (data, mut h) = toy();
        h.smoothing.remove(&2);
        let grid = InducingGrid::uniform(0.0, 14.6, 20).unwrap();
        assert!(matches!(sparse_marginal_loglik(&data, &h, &grid, SparseMethod::Fitc), Err(Error::Contract { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (data, h) = toy();
        let flat = Flat::new(&data);
        let grid = InducingGrid::uniform(0.0, 14.6, 12).unwrap();
        for method in [SparseMethod::Fitc, SparseMethod::Dtc] {
            let theta = pack(&h, &flat.units).unwrap();
            let (_, g) = loglik_and_grad(&flat, &theta, &grid, method).unwrap();
            for k in 0..theta.len() {
                let step = 1e-5;
                let mut tp = theta.clone();
                tp[k] += step;
                let mut tm = theta.clone();
                tm[k] -= step;
                let fp = loglik_and_grad(&flat, &tp, &grid, method).unwrap().0;
                let fm = loglik_and_grad(&flat, &tm, &grid, method).unwrap().0;
                let fd = (fp - fm) / (2.0 * step);
                assert!((g[k] - fd).abs() < 1e-4 * (1.0 + fd.abs()), "{method:?} param {k}: analytic {} vs fd {fd}", g[k]);
            }
        }
    }

    #[test]
    fn empty_data_gives_prior() {
        let h = hyper(2.0, 0.1, &[]);
        let grid = InducingGrid::uniform(0.0, 10.0, 6).unwrap();
        let (m, s) = posterior_u(&[], &h, &grid, SparseMethod::Fitc).unwrap();
        assert!(m.norm() == 0.0);
        let kuu = kernels::gram_uu(grid.points(), h.latent);
        assert!((s - kuu).amax() < 1e-6);
    }

    #[test]
    fn huge_noise_leaves_prior_unchanged() {
        let (data, mut h) = toy();
        h.noise_var = 1e12;
        let grid = InducingGrid::uniform(0.0, 14.6, 10).unwrap();
        let (m, s) = posterior_u(&data, &h, &grid, SparseMethod::Fitc).unwrap();
        assert!(m.norm() < 1e-6);
        let kuu = kernels::gram_uu(grid.points(), h.latent);
        assert!((s - kuu).amax() < 1e-6);
    }

    #[test]
    fn scalar_conjugate_update() {
        // One inducing value (Q = 1 is below the grid minimum, so use two far-apart points
        // and read off the first; the second is effectively independent).
        let h = hyper(1.0, 0.2, &[(1, 1.5, 0.4)]);
        let grid = InducingGrid::new(vec![0.0, 1e3]).unwrap();
        let (t, y) = (0.6, 0.9);
        let data = vec![(1, Series::new(vec![t], vec![y]).unwrap())];
        let (m, s) = posterior_u(&data, &h, &grid, SparseMethod::Fitc).unwrap();
        let sk = h.smoothing[&1];
        let kuu = 1.0 + 1e-8;
        let kfu = kernels::k_fu(t, 0.0, h.latent, sk);
        let kff = kernels::k_ff_diag(h.latent, sk);
        // y = (kfu/kuu) u + r + e with r ~ N(0, kff - kfu^2/kuu)
        let a = kfu / kuu;
        let noise = kff - kfu * kfu / kuu + h.noise_var;
        let post_var = 1.0 / (1.0 / kuu + a * a / noise);
        let post_mean = post_var * a * y / noise;
        assert!((m[0] - post_mean).abs() < 1e-9, "{} vs {post_mean}", m[0]);
        assert!((s[(0, 0)] - post_var).abs() < 1e-9);
    }
}
