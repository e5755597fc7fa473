//! The four pipeline stages. Each one validates and computes everything in
//! memory first and only then writes its files.

use std::path::{Path, PathBuf};

use gpcox_core::data::{read_dataset, write_file_atomic};
use gpcox_core::inference::{train, FittedModel};
use gpcox_core::prediction::{
    conditional_csv, evaluate_metrics, metrics_csv, predict_unit, predictions_csv, read_predictions, summary_json, PredictionResult,
    UnitView,
};
use gpcox_core::simulate::{make_dataset, view_file_name, Truth};
use gpcox_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";

pub fn predictions_file(t_star: f64) -> String {
    format!("predictions_t{t_star}.csv")
}

pub fn conditional_file(t_star: f64) -> String {
    format!("conditional_t{t_star}.csv")
}

pub fn summary_file(t_star: f64) -> String {
    format!("summary_t{t_star}.json")
}

/// Each command writes its own manifest, so `predict` and `evaluate` can share a directory.
pub fn manifest_file(command: &str) -> String {
    format!("{command}.manifest.json")
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    files: Vec<FileEntry>,
}

/// Writes `files` (relative to `dir`) followed by a manifest of their hashes.
fn write_all(dir: &Path, command: &str, config: &RunConfig, files: Vec<(PathBuf, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    let manifest = Manifest {
        command,
        seed: config.seed,
        config_sha256: config.hash(),
        files: files
            .iter()
            .map(|(p, b)| FileEntry { path: p.to_string_lossy().replace('\\', "/"), sha256: hex::encode(Sha256::digest(b)) })
            .collect(),
    };
    let manifest = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mut written = Vec::with_capacity(files.len() + 1);
    for (rel, bytes) in files.into_iter().chain(std::iter::once((PathBuf::from(manifest_file(command)), manifest.into_bytes()))) {
        let path = dir.join(rel);
        write_file_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = make_dataset(&config.simulate, config.seed)?;
    write_all(out, "simulate", config, data.files())
}

pub fn fit(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = &config.paths.dataset_dir;
    let train_set = read_dataset(&dir.join("train/units.csv"), &dir.join("train/signals.csv"), None)?;
    let mut fit_config = config.fit.clone();
    fit_config.n_modes.get_or_insert(config.simulate.modes.len());
    let (model, report) = train(&train_set, &fit_config, config.seed)?;
    let report = serde_json::to_string_pretty(&report).expect("report serializes");
    write_all(out, "fit", config, vec![(MODEL_FILE.into(), model.to_json().into_bytes()), (FIT_REPORT_FILE.into(), report.into_bytes())])
}

/// Predictions for every test unit at every decision time; units that have
/// already failed at `t*` are skipped with a warning.
pub fn predict(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let model = FittedModel::from_json(&read_text(&config.paths.model_dir.join(MODEL_FILE))?)?;
    let dir = config.paths.dataset_dir.join("test");
    let mut files = Vec::new();
    for &t_star in config.t_stars() {
        let view = read_dataset(&dir.join("units.csv"), &dir.join(view_file_name(t_star)), Some(model.meta.n_sensors))?;
        let (live, failed): (Vec<_>, Vec<_>) = view.units.iter().partition(|u| u.event.time >= t_star);
        for u in failed {
            eprintln!("warning: skipping unit {} at t*={t_star}: it failed at {}", u.id, u.event.time);
        }
        let results = live
            .par_iter()
            .map(|u| {
                let v = UnitView { id: u.id, covariates: u.event.covariates.clone(), signals: u.signals.iter().map(|s| s.truncated(t_star)).collect() };
                predict_unit(&model, &v, t_star, &config.predict.settings, config.seed)
            })
            .collect::<Result<Vec<PredictionResult>>>()?;
        files.push((predictions_file(t_star).into(), predictions_csv(&results, model.meta.n_modes)));
        files.push((conditional_file(t_star).into(), conditional_csv(&results)));
        files.push((summary_file(t_star).into(), summary_json(&results).into_bytes()));
    }
    write_all(out, "predict", config, files)
}

/// Scores the predictions found in the output directory against `truth.json`.
pub fn evaluate(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let truth = Truth::from_json(&read_text(&config.paths.dataset_dir.join("truth.json"))?)?;
    let pred_dir = &config.paths.output_dir;
    let mut records = Vec::new();
    for &t_star in config.t_stars() {
        records.extend(read_predictions(&pred_dir.join(predictions_file(t_star)), &pred_dir.join(summary_file(t_star)))?);
    }
    let truths = truth.unit_truth(&records, config.evaluate.coverage)?;
    let table = evaluate_metrics(&records, &truths)?;
    let json = serde_json::to_string_pretty(&table).expect("metrics serialize");
    write_all(out, "evaluate", config, vec![(METRICS_CSV.into(), metrics_csv(&table)), (METRICS_JSON.into(), json.into_bytes())])
}
