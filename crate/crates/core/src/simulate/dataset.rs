//! Dataset assembly and the files written for it.
//!
//! ```text
//! train/units.csv, train/signals.csv   training units, signals up to the event time
//! test/units.csv                       test units, failure mode left blank
//! test/signals_t{t*}.csv               test signals observed up to each decision time
//! truth.json                           true modes, coefficients and RUL per decision time
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gen_failure_time, gen_signals, true_rul, true_survival, SimConfig, TrueUnit, MODULE};
use crate::data::{signals_csv, units_csv, write_file_atomic, Dataset, Unit};
use crate::error::{Error, Result};
use crate::prediction::{PredictionRecord, UnitTruth};
use crate::rng::{derive_seed, stream, tag};
use crate::survival::EventRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulAt {
    pub t_star: f64,
    pub rul: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub unit_id: u32,
    /// 1-based, as in the CSV files.
    pub failure_mode: usize,
    pub event_time: f64,
    pub covariates: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub rul: Vec<RulAt>,
}

/// Everything needed to score predictions, including the generating config
/// so true survival curves can be evaluated on any grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub config: SimConfig,
    pub units: Vec<TruthRecord>,
}

impl Truth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Truth = serde_json::from_str(s).map_err(|e| Error::data(MODULE, format!("invalid truth document: {e}")))?;
        t.config.validate()?;
        let (k, j) = (t.config.modes.len(), t.config.n_sensors());
        if let Some(u) = t.units.iter().find(|u| u.failure_mode == 0 || u.failure_mode > k || u.coefficients.len() != j) {
            return Err(Error::data(MODULE, format!("truth for unit {} does not match the config", u.unit_id)));
        }
        Ok(t)
    }

    fn true_unit(rec: &TruthRecord) -> TrueUnit {
        TrueUnit { id: rec.unit_id, mode: rec.failure_mode - 1, coefficients: rec.coefficients.clone(), covariates: rec.covariates.clone() }
    }

    /// Truth matched to each prediction; with `curves`, the true survival at the prediction's offsets.
    ///
    /// Predictions for units absent from the truth are a contract error listing them.
    pub fn unit_truth(&self, records: &[PredictionRecord], curves: bool) -> Result<Vec<UnitTruth>> {
        let by_id: BTreeMap<u32, &TruthRecord> = self.units.iter().map(|u| (u.unit_id, u)).collect();
        let missing: Vec<String> = records.iter().filter(|r| !by_id.contains_key(&r.unit_id)).map(|r| r.unit_id.to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::contract(MODULE, format!("no truth for units {}", missing.join(", "))));
        }
        records
            .par_iter()
            .map(|r| {
                let rec = by_id[&r.unit_id];
                let unit = Self::true_unit(rec);
                let rul = match rec.rul.iter().find(|x| x.t_star == r.t_star) {
                    Some(x) => x.rul,
                    None => true_rul(&self.config, &unit, r.t_star, self.config.truth_step)?,
                };
                let survival = curves.then(|| true_survival(&self.config, &unit, r.t_star, &r.offsets, self.config.truth_step));
                Ok(UnitTruth { unit_id: r.unit_id, t_star: r.t_star, mode: unit.mode, rul, survival })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub train: Dataset,
    /// Test units with their true modes and signals up to failure.
    pub test: Dataset,
    pub truth: Truth,
}

/// File name of the test view at decision time `t_star`.
pub fn view_file_name(t_star: f64) -> String {
    format!("signals_t{t_star}.csv")
}

impl SimulatedData {
    /// Test units observed up to `t_star`, with their modes hidden.
    pub fn test_view(&self, t_star: f64) -> Dataset {
        Dataset {
            units: self.test.units.iter().map(|u| Unit { mode: None, ..u.truncated(t_star) }).collect(),
            ..self.test.clone()
        }
    }

    /// Relative paths and contents of every dataset file.
    pub fn files(&self) -> Vec<(PathBuf, Vec<u8>)> {
        let hidden: Vec<Unit> = self.test.units.iter().map(|u| Unit { mode: None, signals: vec![], ..u.clone() }).collect();
        let mut files = vec![
            (PathBuf::from("train/units.csv"), units_csv(&self.train.units, self.train.n_covariates)),
            (PathBuf::from("train/signals.csv"), signals_csv(&self.train.units)),
            (PathBuf::from("test/units.csv"), units_csv(&hidden, self.test.n_covariates)),
        ];
        for &t in &self.truth.config.t_stars {
            files.push((Path::new("test").join(view_file_name(t)), signals_csv(&self.test_view(t).units)));
        }
        files.push((PathBuf::from("truth.json"), self.truth.to_json().into_bytes()));
        files
    }

    /// Writes every file under `dir`, creating it if needed; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.files()
            .into_iter()
            .map(|(rel, bytes)| {
                let path = dir.join(rel);
                write_file_atomic(&path, &bytes)?;
                Ok(path)
            })
            .collect()
    }
}

/// Generates training and test units with their ground truth.
///
/// Training ids run `1..=K*n_train` mode by mode, test ids follow. Test units
/// are drawn conditionally on surviving past the largest decision time, so
/// every test unit can be scored at every `t*`. Optional censoring applies to
/// training units only.
pub fn make_dataset(config: &SimConfig, seed: u64) -> Result<SimulatedData> {
    config.validate()?;
    let k_count = config.modes.len();
    let (n_train, n_test) = (config.n_train_per_mode as u32, config.n_test_per_mode as u32);
    let last_t_star = config.t_stars.iter().copied().fold(0.0, f64::max);

    let build = |test: bool| -> Result<Vec<(Unit, TrueUnit)>> {
        let mut out = Vec::new();
        for k in 0..k_count {
            let ids: Vec<u32> = if test {
                (1..=n_test).map(|i| k_count as u32 * n_train + k as u32 * n_test + i).collect()
            } else {
                (1..=n_train).map(|i| k as u32 * n_train + i).collect()
            };
            let units = gen_signals(config, k, &ids, seed)?;
            let mut done = units
                .into_par_iter()
                .map(|sim| {
                    let truth = sim.truth;
                    let after = if test { last_t_star } else { 0.0 };
                    let failure_seed = derive_seed(seed, &[tag::FAILURE, truth.id as u64]);
                    let t = gen_failure_time(|s| truth.hazard(config, s), after, config.t_max, failure_seed)?;
                    let (time, failed) = match (test, config.censoring) {
                        (false, Some(c)) => {
                            let c_time: f64 = stream(seed, &[tag::CENSORING, truth.id as u64]).sample::<f64, _>(Exp1) / c.rate;
                            if c_time < t { (c_time, false) } else { (t, true) }
                        }
                        _ => (t, true),
                    };
                    let event = EventRecord::new(time, failed, truth.covariates.clone())?;
                    let signals = sim.observations.iter().map(|s| s.truncated(time)).collect();
                    Ok((Unit { id: truth.id, mode: Some(k), event, signals }, truth))
                })
                .collect::<Result<Vec<_>>>()?;
            out.append(&mut done);
        }
        Ok(out)
    };

    let train = build(false)?;
    let test = build(true)?;
    let records = test
        .par_iter()
        .map(|(u, truth)| {
            let rul = config
                .t_stars
                .iter()
                .map(|&t_star| Ok(RulAt { t_star, rul: true_rul(config, truth, t_star, config.truth_step)? }))
                .collect::<Result<Vec<_>>>()?;
            Ok(TruthRecord {
                unit_id: u.id,
                failure_mode: truth.mode + 1,
                event_time: u.event.time,
                covariates: truth.covariates.clone(),
                coefficients: truth.coefficients.clone(),
                rul,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let dataset = |units: Vec<(Unit, TrueUnit)>| Dataset {
        n_sensors: config.n_sensors(),
        n_covariates: config.n_covariates(),
        units: units.into_iter().map(|(u, _)| u).collect(),
    };
    Ok(SimulatedData { train: dataset(train), test: dataset(test), truth: Truth { seed, config: config.clone(), units: records } })
}
