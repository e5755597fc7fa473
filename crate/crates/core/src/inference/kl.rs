//! Closed-form KL divergences between members of the prior families.

use statrs::function::gamma::{digamma, ln_gamma};

use super::MODULE;
use crate::error::{Error, Result};

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(MODULE, format!("{what} must be positive and finite, got {v}")))
    }
}

/// `KL(N(m_q, v_q) || N(m_p, v_p))`, arguments as `(mean, variance)`.
pub fn kl_normal(q: (f64, f64), p: (f64, f64)) -> Result<f64> {
    positive(q.1, "variance")?;
    positive(p.1, "variance")?;
    let d = q.0 - p.0;
    Ok(0.5 * (q.1 / p.1 + d * d / p.1 - 1.0 - (q.1 / p.1).ln()))
}

/// `KL(Gamma(a_q, r_q) || Gamma(a_p, r_p))` in the shape–rate convention.
pub fn kl_gamma(q: (f64, f64), p: (f64, f64)) -> Result<f64> {
    for (v, what) in [(q.0, "shape"), (q.1, "rate"), (p.0, "shape"), (p.1, "rate")] {
        positive(v, what)?;
    }
    let (aq, rq) = q;
    let (ap, rp) = p;
    Ok((aq - ap) * digamma(aq) - ln_gamma(aq) + ln_gamma(ap) + ap * (rq.ln() - rp.ln()) + aq * (rp - rq) / rq)
}

/// `KL(Dir(q) || Dir(p))`.
pub fn kl_dirichlet(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::contract(MODULE, format!("Dirichlet parameters of lengths {} and {}", q.len(), p.len())));
    }
    for v in q.iter().chain(p) {
        positive(*v, "concentration")?;
    }
    let sq: f64 = q.iter().sum();
    let sp: f64 = p.iter().sum();
    let dsq = digamma(sq);
    let mut kl = ln_gamma(sq) - ln_gamma(sp);
    for (a, b) in q.iter().zip(p) {
        kl += ln_gamma(*b) - ln_gamma(*a) + (a - b) * (digamma(*a) - dsq);
    }
    Ok(kl)
}

/// Posterior concentration after observing `counts` units per mode.
pub fn dirichlet_conjugate_update(alpha: &[f64], counts: &[usize]) -> Result<Vec<f64>> {
    if alpha.len() != counts.len() {
        return Err(Error::contract(MODULE, format!("{} concentrations for {} mode counts", alpha.len(), counts.len())));
    }
    for a in alpha {
        positive(*a, "concentration")?;
    }
    Ok(alpha.iter().zip(counts).map(|(a, c)| a + *c as f64).collect())
}
