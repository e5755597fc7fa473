//! Dense linear-algebra helpers shared by the GP and prediction code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative jitter applied first, as a fraction of the mean diagonal.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Cholesky factor together with the absolute jitter that was added to the diagonal.
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `L x = b` for lower-triangular `L`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        l.solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        l.solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
    }

    /// Solves `L^T x = b`.
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        l.tr_solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_upper_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        l.tr_solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
    }
}

/// How the jitter ladder starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jitter {
    /// Always add the base jitter (kernel Gram matrices of inducing inputs).
    Always,
    /// Try the bare matrix first and only then climb the ladder.
    IfNeeded,
}

/// Cholesky factorization with an escalating diagonal jitter.
///
/// The ladder starts at `1e-8 * trace / n` and grows by a factor of ten up to
/// `1e-2 * trace / n`.
pub fn cholesky(m: &DMatrix<f64>, policy: Jitter, module: &'static str, what: &str) -> Result<Factor> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::contract(module, format!("{what}: matrix is not square")));
    }
    if n == 0 {
        let chol = Cholesky::new(DMatrix::<f64>::zeros(0, 0)).expect("empty matrix factorizes");
        return Ok(Factor { chol, jitter: 0.0 });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(module, format!("{what}: matrix has non-finite entries")));
    }
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    if policy == Jitter::IfNeeded {
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(Factor { chol, jitter: 0.0 });
        }
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            return Ok(Factor { chol, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::numerical(
        module,
        format!("{what}: matrix is not positive definite even with jitter {:.1e}", JITTER_MAX * scale),
    ))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Log density of `y` under `N(mean, cov)`.
pub fn gaussian_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>, module: &'static str) -> Result<f64> {
    let n = y.len();
    if n == 0 {
        return Ok(0.0);
    }
    let factor = cholesky(cov, Jitter::IfNeeded, module, "predictive covariance")?;
    let z = factor.solve_lower_vec(&(y - mean));
    Ok(-0.5 * (z.norm_squared() + factor.log_det() + n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Draws `n_samples` rows from `N(mean, L L^T)` given the lower factor `L`.
pub fn sample_gaussian<R: Rng>(mean: &DVector<f64>, l: &DMatrix<f64>, n_samples: usize, rng: &mut R) -> DMatrix<f64> {
    let d = mean.len();
    let mut out = DMatrix::zeros(n_samples, d);
    let mut z = DVector::zeros(d);
    for s in 0..n_samples {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = l * &z;
        for c in 0..d {
            out[(s, c)] = mean[c] + x[c];
        }
    }
    out
}

/// Linear-interpolation quantile (type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
