//! Units, signal series and their CSV representations.
//!
//! `units.csv`: `unit_id,failure_mode,event_time,event_indicator,x_1..x_P`
//! `signals.csv`: `unit_id,sensor_id,time,value`
//!
//! Failure modes and sensors are 1-based in files and 0-based in memory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::EventRecord;

/// Observations of one sensor on one unit, sorted by time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::contract("data", "times and values differ in length"));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::contract("data", "series times must be sorted"));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::data("data", "series contains non-finite values"));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observations at or before `t`.
    pub fn truncated(&self, t: f64) -> Series {
        let n = self.times.partition_point(|&x| x <= t);
        Series { times: self.times[..n].to_vec(), values: self.values[..n].to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: u32,
    /// Observed failure mode (0-based); `None` for units whose mode is unknown.
    pub mode: Option<usize>,
    pub event: EventRecord,
    /// One series per sensor.
    pub signals: Vec<Series>,
}

impl Unit {
    pub fn truncated(&self, t: f64) -> Unit {
        Unit { signals: self.signals.iter().map(|s| s.truncated(t)).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_sensors: usize,
    pub n_covariates: usize,
    pub units: Vec<Unit>,
}

impl Dataset {
    pub fn n_modes(&self) -> usize {
        self.units.iter().filter_map(|u| u.mode).max().map_or(0, |m| m + 1)
    }

    pub fn units_of_mode(&self, mode: usize) -> impl Iterator<Item = &Unit> {
        self.units.iter().filter(move |u| u.mode == Some(mode))
    }

    /// Largest event time in the set.
    pub fn max_event_time(&self) -> f64 {
        self.units.iter().map(|u| u.event.time).fold(0.0, f64::max)
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory csv write");
    for r in rows {
        w.write_record(&r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn units_csv(units: &[Unit], n_covariates: usize) -> Vec<u8> {
    let mut header: Vec<String> = ["unit_id", "failure_mode", "event_time", "event_indicator"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_covariates).map(|p| format!("x_{p}")));
    let rows = units
        .iter()
        .map(|u| {
            let mut r = vec![
                u.id.to_string(),
                u.mode.map(|m| (m + 1).to_string()).unwrap_or_default(),
                u.event.time.to_string(),
                (u.event.failed as u8).to_string(),
            ];
            r.extend(u.event.covariates.iter().map(|x| x.to_string()));
            r
        })
        .collect();
    csv_bytes(header, rows)
}

pub fn signals_csv(units: &[Unit]) -> Vec<u8> {
    let header = ["unit_id", "sensor_id", "time", "value"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for u in units {
        for (j, s) in u.signals.iter().enumerate() {
            for (t, y) in s.times.iter().zip(&s.values) {
                rows.push(vec![u.id.to_string(), (j + 1).to_string(), t.to_string(), y.to_string()]);
            }
        }
    }
    csv_bytes(header, rows)
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, path: &Path, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::data("data", format!("{}:{line}: cannot parse {what} from {field:?}", path.display())))
}

/// Reads a dataset from a units file and a signals file.
///
/// `n_sensors` fixes the sensor count; when `None` it is the largest sensor id seen.
pub fn read_dataset(units_path: &Path, signals_path: &Path, n_sensors: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(units_path).map_err(|e| csv_err(units_path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(units_path, e))?.clone();
    let expected = ["unit_id", "failure_mode", "event_time", "event_indicator"];
    if headers.len() < 4 || headers.iter().take(4).ne(expected.iter().copied()) {
        return Err(Error::data("data", format!("{}: unexpected header {:?}", units_path.display(), headers)));
    }
    let n_covariates = headers.len() - 4;
    let mut units: Vec<Unit> = Vec::new();
    let mut index = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(units_path, e))?;
        let id: u32 = parse(&rec[0], "unit_id", units_path, line)?;
        let mode = if rec[1].trim().is_empty() {
            None
        } else {
            let m: usize = parse(&rec[1], "failure_mode", units_path, line)?;
            if m == 0 {
                return Err(Error::data("data", format!("{}:{line}: failure modes are 1-based", units_path.display())));
            }
            Some(m - 1)
        };
        let time: f64 = parse(&rec[2], "event_time", units_path, line)?;
        let ind: u8 = parse(&rec[3], "event_indicator", units_path, line)?;
        if ind > 1 {
            return Err(Error::data("data", format!("{}:{line}: event_indicator must be 0 or 1", units_path.display())));
        }
        let covariates = (0..n_covariates)
            .map(|p| parse::<f64>(&rec[4 + p], "covariate", units_path, line))
            .collect::<Result<Vec<_>>>()?;
        let event = EventRecord::new(time, ind == 1, covariates)
            .map_err(|e| Error::data("data", format!("{}:{line}: {e}", units_path.display())))?;
        if index.insert(id, units.len()).is_some() {
            return Err(Error::data("data", format!("{}:{line}: duplicate unit_id {id}", units_path.display())));
        }
        units.push(Unit { id, mode, event, signals: Vec::new() });
    }

    let mut rdr = csv::Reader::from_path(signals_path).map_err(|e| csv_err(signals_path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(signals_path, e))?.clone();
    if headers.iter().ne(["unit_id", "sensor_id", "time", "value"].iter().copied()) {
        return Err(Error::data("data", format!("{}: unexpected header {:?}", signals_path.display(), headers)));
    }
    let mut raw: BTreeMap<(u32, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut max_sensor = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(signals_path, e))?;
        let id: u32 = parse(&rec[0], "unit_id", signals_path, line)?;
        let sensor: usize = parse(&rec[1], "sensor_id", signals_path, line)?;
        if sensor == 0 {
            return Err(Error::data("data", format!("{}:{line}: sensor ids are 1-based", signals_path.display())));
        }
        let t: f64 = parse(&rec[2], "time", signals_path, line)?;
        let y: f64 = parse(&rec[3], "value", signals_path, line)?;
        if !index.contains_key(&id) {
            return Err(Error::data("data", format!("{}:{line}: unit {id} is not listed in the units file", signals_path.display())));
        }
        max_sensor = max_sensor.max(sensor);
        raw.entry((id, sensor - 1)).or_default().push((t, y));
    }
    let n_sensors = match n_sensors {
        Some(j) if j < max_sensor => {
            return Err(Error::data("data", format!("sensor id {max_sensor} exceeds configured sensor count {j}")));
        }
        Some(j) => j,
        None => max_sensor,
    };
    for u in units.iter_mut() {
        u.signals = vec![Series::default(); n_sensors];
    }
    for ((id, j), mut obs) in raw {
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (times, values) = obs.into_iter().unzip();
        units[index[&id]].signals[j] = Series::new(times, values)?;
    }
    Ok(Dataset { n_sensors, n_covariates, units })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data("data", format!("{}: {other:?}", path.display())),
    }
}
