//! Joint failure-mode diagnosis and remaining-useful-life prediction.
//!
//! Degradation signals of each (failure mode, sensor) group are modelled by a
//! sparse convolved multi-output Gaussian process; failure times follow a
//! Bayesian Cox model whose hazard depends on static covariates and on the
//! latent signals. Variational inference fits the survival part, and the
//! prediction layer combines both into mode probabilities, survival curves and
//! RUL estimates for partially observed units.

pub mod cmgp;
pub mod data;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod prediction;
#[cfg(any(test, feature = "oracles"))]
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod survival;

pub use data::{Dataset, Series, Unit};
pub use error::{Error, Result};
pub use kernels::{LatentKernelParams, SmoothingKernelParams};
pub use survival::{CoxBaselineParams, CoxCoefficients, EventRecord, SignalPath};
