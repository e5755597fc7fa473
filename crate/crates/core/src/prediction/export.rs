//! File formats for predictions.
//!
//! `predictions_t{t*}.csv`: `unit_id,t_star,offset,point,lower,upper,p_mode_1..p_mode_K`
//! (marginal curve; mode probabilities repeated on every row).
//! `conditional_t{t*}.csv`: `unit_id,t_star,mode,offset,point,lower,upper`.
//! `summary_t{t*}.json`: one [`PredictionSummary`] per unit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PredictionRecord, PredictionResult, MODULE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub unit_id: u32,
    pub t_star: f64,
    pub mode_probs: Vec<f64>,
    pub log_densities: Vec<f64>,
    pub rul: f64,
    pub horizon: f64,
}

fn write_rows(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory csv write");
    for r in rows {
        w.write_record(&r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn predictions_csv(results: &[PredictionResult], n_modes: usize) -> Vec<u8> {
    let mut header: Vec<String> = ["unit_id", "t_star", "offset", "point", "lower", "upper"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_modes).map(|k| format!("p_mode_{k}")));
    let rows = results.iter().flat_map(|r| {
        let c = &r.marginal;
        (0..c.grid.len()).map(move |g| {
            let mut row = vec![
                r.unit_id.to_string(),
                r.t_star.to_string(),
                c.grid[g].to_string(),
                c.point[g].to_string(),
                c.lower[g].to_string(),
                c.upper[g].to_string(),
            ];
            row.extend(r.mode_posterior.probs.iter().map(|p| p.to_string()));
            row
        })
    });
    write_rows(header, rows)
}

pub fn conditional_csv(results: &[PredictionResult]) -> Vec<u8> {
    let header = ["unit_id", "t_star", "mode", "offset", "point", "lower", "upper"].iter().map(|s| s.to_string()).collect();
    let rows = results.iter().flat_map(|r| {
        r.conditional.iter().enumerate().flat_map(move |(k, c)| {
            (0..c.grid.len()).map(move |g| {
                vec![
                    r.unit_id.to_string(),
                    r.t_star.to_string(),
                    (k + 1).to_string(),
                    c.grid[g].to_string(),
                    c.point[g].to_string(),
                    c.lower[g].to_string(),
                    c.upper[g].to_string(),
                ]
            })
        })
    });
    write_rows(header, rows)
}

pub fn summary_json(results: &[PredictionResult]) -> String {
    let s: Vec<PredictionSummary> = results
        .iter()
        .map(|r| PredictionSummary {
            unit_id: r.unit_id,
            t_star: r.t_star,
            mode_probs: r.mode_posterior.probs.clone(),
            log_densities: r.mode_posterior.log_densities.clone(),
            rul: r.rul,
            horizon: *r.marginal.grid.last().expect("non-empty grid"),
        })
        .collect();
    serde_json::to_string_pretty(&s).expect("summary serializes")
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::data(MODULE, format!("{}: {msg}", path.display()))
}

/// Reads a predictions CSV and its JSON summary back into evaluation records.
pub fn read_predictions(csv_path: &Path, summary_path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(summary_path).map_err(|e| Error::io(summary_path, e))?;
    let summaries: Vec<PredictionSummary> = serde_json::from_str(&text).map_err(|e| bad(summary_path, e))?;
    let mut curves: BTreeMap<(u32, u64), (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| bad(csv_path, e))?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(csv_path, e))?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(csv_path, format!("line {}: bad column {}", i + 2, k + 1)))
        };
        let id = rec.get(0).and_then(|v| v.parse::<u32>().ok()).ok_or_else(|| bad(csv_path, format!("line {}: bad unit_id", i + 2)))?;
        let entry = curves.entry((id, field(1)?.to_bits())).or_default();
        entry.0.push(field(2)?);
        entry.1.push(field(4)?);
        entry.2.push(field(5)?);
    }
    summaries
        .into_iter()
        .map(|s| {
            let (offsets, lower, upper) = curves
                .remove(&(s.unit_id, s.t_star.to_bits()))
                .ok_or_else(|| bad(csv_path, format!("no curve rows for unit {} at t*={}", s.unit_id, s.t_star)))?;
            Ok(PredictionRecord { unit_id: s.unit_id, t_star: s.t_star, probs: s.mode_probs, rul: s.rul, offsets, lower, upper })
        })
        .collect()
}
