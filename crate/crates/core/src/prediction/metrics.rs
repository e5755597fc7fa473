//! Mode error, RUL absolute error and band coverage of the survival curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PredictionResult, MODULE};
use crate::error::{Error, Result};
use crate::linalg::quantile_sorted;

/// What evaluation needs from a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub unit_id: u32,
    pub t_star: f64,
    pub probs: Vec<f64>,
    pub rul: f64,
    pub offsets: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl From<&PredictionResult> for PredictionRecord {
    fn from(r: &PredictionResult) -> Self {
        Self {
            unit_id: r.unit_id,
            t_star: r.t_star,
            probs: r.mode_posterior.probs.clone(),
            rul: r.rul,
            offsets: r.marginal.grid.clone(),
            lower: r.marginal.lower.clone(),
            upper: r.marginal.upper.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTruth {
    pub unit_id: u32,
    pub t_star: f64,
    /// True failure mode (0-based).
    pub mode: usize,
    pub rul: f64,
    /// True conditional survival at the prediction's offsets, when known.
    pub survival: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMetrics {
    pub unit_id: u32,
    pub t_star: f64,
    pub mode_error: f64,
    pub rul_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

/// Mean and quartiles of a per-unit metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Distribution {
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTimeMetrics {
    pub t_star: f64,
    pub n_units: usize,
    pub mode_error: Distribution,
    pub rul_error: Distribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub units: Vec<UnitMetrics>,
    /// Aggregates per decision time, in increasing `t*`.
    pub by_t_star: Vec<DecisionTimeMetrics>,
}

/// Fraction of offsets at which the band contains the true survival probability.
fn coverage(rec: &PredictionRecord, truth: &[f64]) -> Result<f64> {
    if truth.len() != rec.offsets.len() {
        return Err(Error::contract(MODULE, format!("unit {}: true curve does not match the prediction grid", rec.unit_id)));
    }
    let hits = truth
        .iter()
        .zip(rec.lower.iter().zip(&rec.upper))
        .filter(|(s, (lo, hi))| **lo <= **s && **s <= **hi)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Per-unit and per-decision-time metrics; coverage is reported only when every truth carries a curve.
pub fn evaluate_metrics(records: &[PredictionRecord], truth: &[UnitTruth]) -> Result<MetricsTable> {
    let index: BTreeMap<(u32, u64), &UnitTruth> = truth.iter().map(|t| ((t.unit_id, t.t_star.to_bits()), t)).collect();
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !index.contains_key(&(r.unit_id, r.t_star.to_bits())))
        .map(|r| format!("{}@{}", r.unit_id, r.t_star))
        .collect();
    if !missing.is_empty() {
        return Err(Error::contract(MODULE, format!("no truth for predictions {}", missing.join(", "))));
    }
    let with_curves = records.iter().all(|r| index[&(r.unit_id, r.t_star.to_bits())].survival.is_some());
    let units = records
        .iter()
        .map(|r| {
            let t = index[&(r.unit_id, r.t_star.to_bits())];
            let p_true = r.probs.get(t.mode).copied().ok_or_else(|| {
                Error::contract(MODULE, format!("unit {}: true mode {} outside the predicted modes", r.unit_id, t.mode + 1))
            })?;
            let coverage = match (&t.survival, with_curves) {
                (Some(s), true) => Some(coverage(r, s)?),
                _ => None,
            };
            Ok(UnitMetrics { unit_id: r.unit_id, t_star: r.t_star, mode_error: 1.0 - p_true, rul_error: (r.rul - t.rul).abs(), coverage })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t_stars: Vec<f64> = units.iter().map(|u| u.t_star).collect();
    t_stars.sort_by(f64::total_cmp);
    t_stars.dedup();
    let by_t_star = t_stars
        .into_iter()
        .map(|ts| {
            let rows: Vec<&UnitMetrics> = units.iter().filter(|u| u.t_star == ts).collect();
            let col = |f: &dyn Fn(&UnitMetrics) -> f64| rows.iter().map(|u| f(u)).collect::<Vec<f64>>();
            DecisionTimeMetrics {
                t_star: ts,
                n_units: rows.len(),
                mode_error: Distribution::of(&col(&|u| u.mode_error)),
                rul_error: Distribution::of(&col(&|u| u.rul_error)),
                coverage: with_curves.then(|| Distribution::of(&col(&|u| u.coverage.unwrap_or(f64::NAN)))),
            }
        })
        .collect();
    Ok(MetricsTable { units, by_t_star })
}

/// Per-unit metrics as CSV; the coverage column is present only when computed.
pub fn metrics_csv(table: &MetricsTable) -> Vec<u8> {
    let with_cov = table.units.iter().all(|u| u.coverage.is_some()) && !table.units.is_empty();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit_id", "t_star", "mode_error", "rul_error"];
    if with_cov {
        header.push("coverage");
    }
    w.write_record(&header).expect("in-memory csv write");
    for u in &table.units {
        let mut row = vec![u.unit_id.to_string(), u.t_star.to_string(), u.mode_error.to_string(), u.rul_error.to_string()];
        if let (true, Some(c)) = (with_cov, u.coverage) {
            row.push(c.to_string());
        }
        w.write_record(&row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}
