use std::collections::BTreeMap;

use gpcox_core::cmgp::{CmgpHyper, CmgpModel, InducingGrid, SparseMethod};
use gpcox_core::inference::{FittedModel, GammaParams, ModePrior, ModeState, NormalParams, Priors, TrainingMeta, VariationalState};
use gpcox_core::prediction::{
    conditional_survival, marginal_survival, mode_posterior, offset_grid, personalize, posterior_from_logs, predict_unit,
    rul_estimate, PredictConfig, SurvivalCurve, UnitView,
};
use gpcox_core::{CoxCoefficients, LatentKernelParams, Series, SmoothingKernelParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// One-sensor model whose mode `k` has latent level `levels[k]` known almost exactly.
fn toy_model(levels: &[f64], alpha: Vec<f64>, b: NormalParams, rho: GammaParams, beta: f64) -> FittedModel {
    let grid = InducingGrid::uniform(0.0, 100.0, 21).unwrap();
    let smoothing: BTreeMap<u32, SmoothingKernelParams> =
        [(1, SmoothingKernelParams { eta: 1.0, xi: 1.0 }), (2, SmoothingKernelParams { eta: 1.2, xi: 1.5 })].into_iter().collect();
    let cmgp = levels
        .iter()
        .enumerate()
        .map(|(k, level)| {
            let hyper = CmgpHyper { latent: LatentKernelParams { lambda: 10.0 }, smoothing: smoothing.clone(), noise_var: 0.01 };
            CmgpModel::new(k, 0, SparseMethod::Fitc, hyper, grid.clone(), DVector::from_element(21, *level), DMatrix::identity(21, 21) * 1e-6, 0.0)
                .unwrap()
        })
        .collect();
    let n = levels.len();
    FittedModel {
        version: "gpcox-model/1".into(),
        meta: TrainingMeta { n_modes: n, n_sensors: 1, n_covariates: 0, max_event_time: 10.0, units_per_mode: vec![10; n], integration_step: 0.05 },
        priors: Priors { modes: vec![ModePrior { b, rho }; n], alpha: vec![1.0; n] },
        state: VariationalState { alpha, modes: vec![ModeState { b, rho, coef: CoxCoefficients { gamma: vec![], beta: vec![beta] } }; n] },
        cmgp,
    }
}

fn degenerate() -> (NormalParams, GammaParams) {
    (NormalParams { mean: 0.0, var: 1e-14 }, GammaParams { shape: 1e12, rate: 1e24 })
}

fn view(id: u32, times: Vec<f64>, values: Vec<f64>) -> UnitView {
    UnitView { id, covariates: vec![], signals: vec![Series::new(times, values).unwrap()] }
}

fn curve(grid: Vec<f64>, point: Vec<f64>) -> SurvivalCurve {
    SurvivalCurve::from_samples(0.0, grid, vec![point], 0.95).unwrap()
}

#[test]
fn no_observations_give_the_dirichlet_mean() {
    let (b, rho) = degenerate();
    let m = toy_model(&[0.0, 1.0, 2.0], vec![11.0, 21.0, 21.0], b, rho, 0.0);
    let v = view(1, vec![], vec![]);
    let s = personalize(&m, &v).unwrap();
    let p = mode_posterior(&m, &v, &s, None).unwrap();
    for (got, want) in p.probs.iter().zip([11.0 / 53.0, 21.0 / 53.0, 21.0 / 53.0]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn uninformative_likelihood_returns_the_prior() {
    let prior = [0.2, 0.3, 0.5];
    let p = posterior_from_logs(&prior, &[-12.5, -12.5, -12.5]);
    for (a, b) in p.iter().zip(prior) {
        assert!((a - b).abs() < 1e-15);
    }
    let (b, rho) = degenerate();
    let m = toy_model(&[1.0, 1.0], vec![3.0, 7.0], b, rho, 0.0);
    let v = view(1, vec![1.0, 2.0, 3.0], vec![1.1, 0.9, 1.0]);
    let p = mode_posterior(&m, &v, &personalize(&m, &v).unwrap(), None).unwrap();
    assert!((p.probs[0] - 0.3).abs() < 1e-12 && (p.probs[1] - 0.7).abs() < 1e-12);
}

#[test]
fn fifty_nats_dominate() {
    let p = posterior_from_logs(&[0.5, 0.5], &[-100.0, -150.0]);
    // 1 - 1e-20 rounds to 1.0 in double precision, so check the complement too.
    assert!(p[0] >= 1.0 - 1e-20);
    assert!(p[1] < 1e-20);
}

#[test]
fn observations_pick_the_matching_mode() {
    let (b, rho) = degenerate();
    let m = toy_model(&[0.0, 3.0], vec![1.0, 1.0], b, rho, 0.0);
    let v = view(9, vec![1.0, 2.0, 3.0, 4.0], vec![2.9, 3.1, 3.0, 3.05]);
    let p = mode_posterior(&m, &v, &personalize(&m, &v).unwrap(), None).unwrap();
    assert!(p.probs[1] > 0.999, "{:?}", p.probs);
    let sum: f64 = p.probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn unknown_sensor_is_a_contract_error() {
    let (b, rho) = degenerate();
    let m = toy_model(&[0.0], vec![1.0], b, rho, 0.0);
    let mut v = view(1, vec![1.0], vec![0.0]);
    v.signals.push(Series::new(vec![1.0], vec![0.0]).unwrap());
    assert!(personalize(&m, &v).is_err());
}

#[test]
fn conditional_curve_starts_at_one_and_decays() {
    let m = toy_model(&[0.5], vec![1.0], NormalParams { mean: -1.0, var: 0.1 }, GammaParams { shape: 4.0, rate: 40.0 }, 0.3);
    let v = view(3, vec![0.0, 1.0, 2.0], vec![0.5, 0.6, 0.4]);
    let s = personalize(&m, &v).unwrap();
    let config = PredictConfig { n_mc: 50, ..PredictConfig::default() };
    let c = conditional_survival(&m, 0, &v, &s[0], 2.0, 8.0, &config, 1).unwrap();
    for row in &c.samples {
        assert_eq!(row[0], 1.0);
        assert!(row.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(c.lower.iter().zip(&c.point).zip(&c.upper).all(|((l, p), u)| l <= p && p <= u));
}

#[test]
fn degenerate_posterior_gives_unit_exponential() {
    let (b, rho) = degenerate();
    let m = toy_model(&[0.0], vec![1.0], b, rho, 0.0);
    let v = view(1, vec![0.5], vec![0.0]);
    let s = personalize(&m, &v).unwrap();
    let config = PredictConfig { n_mc: 4, ..PredictConfig::default() };
    let c = conditional_survival(&m, 0, &v, &s[0], 1.0, 5.0, &config, 3).unwrap();
    // Trapezoid error of exp(-t) with step 0.025 is below h^2 t / 12 * S.
    for (g, p) in c.grid.iter().zip(&c.point) {
        assert!((p - (-g).exp()).abs() < 1e-4, "{g}: {p}");
    }
}

#[test]
fn more_draws_agree_within_monte_carlo_error() {
    let m = toy_model(&[0.5], vec![1.0], NormalParams { mean: -1.0, var: 0.2 }, GammaParams { shape: 5.0, rate: 50.0 }, 0.5);
    let v = view(4, vec![0.0, 1.0, 2.0, 3.0], vec![0.4, 0.5, 0.6, 0.5]);
    let s = personalize(&m, &v).unwrap();
    let run = |n| conditional_survival(&m, 0, &v, &s[0], 3.0, 6.0, &PredictConfig { n_mc: n, ..PredictConfig::default() }, 17).unwrap();
    let (small, large) = (run(500), run(2000));
    let se = |c: &SurvivalCurve, g: usize| {
        let n = c.samples.len() as f64;
        let var = c.samples.iter().map(|r| (r[g] - c.point[g]).powi(2)).sum::<f64>() / (n - 1.0);
        var / n
    };
    for g in 0..small.grid.len() {
        let bound = 2.0 * (se(&small, g) + se(&large, g)).sqrt();
        assert!((small.point[g] - large.point[g]).abs() <= bound + 1e-15, "offset {g}");
    }
}

#[test]
fn equal_mixture_of_point_eight_and_point_four() {
    let grid = vec![0.0, 1.0];
    let a = SurvivalCurve { t_star: 5.0, grid: grid.clone(), samples: vec![vec![1.0, 0.8]; 3], point: vec![1.0, 0.8], lower: vec![1.0, 0.8], upper: vec![1.0, 0.8] };
    let b = SurvivalCurve { samples: vec![vec![1.0, 0.4]; 3], point: vec![1.0, 0.4], lower: vec![1.0, 0.4], upper: vec![1.0, 0.4], ..a.clone() };
    let m = marginal_survival(&[a.clone(), b.clone()], &[0.5, 0.5], 0.95, 1).unwrap();
    // 0.5 * 0.8 + 0.5 * 0.4 rounds to the double just above 0.6.
    assert_eq!(m.point[1], 0.5 * 0.8 + 0.5 * 0.4);
    assert!((m.point[1] - 0.6).abs() <= f64::EPSILON);
    let one = marginal_survival(&[a.clone(), b], &[1.0, 0.0], 0.95, 1).unwrap();
    assert_eq!(one.point, a.point);
    assert_eq!(one.samples, a.samples);
}

#[test]
fn table_weights_mix_pointwise() {
    let grid = offset_grid(10.0, 11);
    let a = curve(grid.clone(), grid.iter().map(|t| (-0.2 * t).exp()).collect());
    let b = curve(grid.clone(), grid.iter().map(|t| (-0.6 * t).exp()).collect());
    let m = marginal_survival(&[a.clone(), b.clone()], &[0.746, 0.254], 0.95, 4).unwrap();
    for g in 0..grid.len() {
        assert!((m.point[g] - (0.746 * a.point[g] + 0.254 * b.point[g])).abs() < 1e-15);
    }
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = curve(vec![0.0, 1.0], vec![1.0, 0.5]);
    let b = curve(vec![0.0, 2.0], vec![1.0, 0.5]);
    assert!(marginal_survival(&[a, b], &[0.5, 0.5], 0.95, 0).is_err());
}

#[test]
fn rul_of_exponential_curves() {
    let grid = offset_grid(40.0, 40_001);
    let half = curve(grid.clone(), grid.iter().map(|t| (-0.5 * t).exp()).collect());
    assert!((rul_estimate(&half).unwrap() - 2.0).abs() < 1e-3);
    let unit = curve(grid.clone(), grid.iter().map(|t| (-t).exp()).collect());
    assert!((rul_estimate(&unit).unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn rul_of_a_step_curve() {
    let grid = offset_grid(10.0, 201);
    let step = curve(grid.clone(), grid.iter().map(|t| if *t < 5.0 { 1.0 } else { 0.0 }).collect());
    assert!((rul_estimate(&step).unwrap() - 5.0).abs() <= 0.05);
}

#[test]
fn rul_needs_the_tail_to_decay() {
    let grid = offset_grid(1.0, 11);
    let flat = curve(grid.clone(), vec![1.0; 11]);
    assert!(rul_estimate(&flat).is_err());
}

#[test]
fn predict_unit_extends_a_short_horizon() {
    let m = toy_model(&[0.0, 0.0], vec![1.0, 1.0], NormalParams { mean: 0.0, var: 0.01 }, GammaParams { shape: 100.0, rate: 10_000.0 }, 0.0);
    let v = view(2, vec![0.0, 1.0], vec![0.0, 0.0]);
    let config = PredictConfig { n_mc: 40, horizon: Some(1.0), ..PredictConfig::default() };
    let r = predict_unit(&m, &v, 1.0, &config, 5).unwrap();
    assert!(*r.marginal.grid.last().unwrap() >= 8.0);
    // Hazard close to one: remaining life close to one.
    assert!((r.rul - 1.0).abs() < 0.05, "{}", r.rul);
    let again = predict_unit(&m, &v, 1.0, &config, 5).unwrap();
    assert_eq!(r, again);
}

proptest! {
    #[test]
    fn posterior_ignores_a_common_shift(logs in prop::collection::vec(-50.0f64..50.0, 2..6), shift in -500.0f64..500.0) {
        let prior = vec![1.0 / logs.len() as f64; logs.len()];
        let shifted: Vec<f64> = logs.iter().map(|l| l + shift).collect();
        let (a, b) = (posterior_from_logs(&prior, &logs), posterior_from_logs(&prior, &shifted));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_point_lies_between_the_conditionals(rates in prop::collection::vec(0.05f64..2.0, 2..4), raw in prop::collection::vec(0.01f64..1.0, 4)) {
        let grid = offset_grid(5.0, 21);
        let curves: Vec<SurvivalCurve> = rates.iter().map(|r| curve(grid.clone(), grid.iter().map(|t| (-r * t).exp()).collect())).collect();
        let w: f64 = raw[..rates.len()].iter().sum();
        let probs: Vec<f64> = raw[..rates.len()].iter().map(|p| p / w).collect();
        let m = marginal_survival(&curves, &probs, 0.9, 0).unwrap();
        for g in 0..grid.len() {
            let lo = curves.iter().map(|c| c.point[g]).fold(f64::INFINITY, f64::min);
            let hi = curves.iter().map(|c| c.point[g]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.point[g] >= lo - 1e-15 && m.point[g] <= hi + 1e-15);
        }
    }

    #[test]
    fn dominating_curves_live_longer(rate in 0.2f64..3.0, power in 0.1f64..1.0) {
        let grid = offset_grid(60.0, 601);
        let mut base: Vec<f64> = grid.iter().map(|t| (-rate * t).exp()).collect();
        *base.last_mut().unwrap() = 0.0;
        let upper: Vec<f64> = base.iter().map(|s| s.powf(power)).collect();
        let (a, b) = (rul_estimate(&curve(grid.clone(), base)).unwrap(), rul_estimate(&curve(grid, upper)).unwrap());
        prop_assert!(b >= a);
    }
}
