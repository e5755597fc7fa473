//! Run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use gpcox_core::inference::TrainConfig;
use gpcox_core::prediction::PredictConfig;
use gpcox_core::simulate::SimConfig;
use gpcox_core::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

const MODULE: &str = "cli";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub model_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset_dir: "data".into(), model_dir: "model".into(), output_dir: "output".into() }
    }
}

/// Prediction settings plus the decision times to predict at.
///
/// In the file this is a single `[predict]` table; `t_stars` defaults to the
/// simulator's decision times.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PredictSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_stars: Option<Vec<f64>>,
    #[serde(flatten)]
    pub settings: PredictConfig,
}

impl<'de> Deserialize<'de> for PredictSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(d)?;
        let t_stars = table.remove("t_stars").map(|v| v.try_into::<Vec<f64>>()).transpose().map_err(D::Error::custom)?;
        let settings = toml::Value::Table(table).try_into::<PredictConfig>().map_err(D::Error::custom)?;
        Ok(Self { t_stars, settings })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Score band coverage against the true survival curves.
    pub coverage: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { coverage: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub simulate: SimConfig,
    pub fit: TrainConfig,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            simulate: SimConfig::default(),
            fit: TrainConfig::default(),
            predict: PredictSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::config(MODULE, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { message, .. } => Error::config(MODULE, format!("{}: {message}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.simulate.validate()?;
        self.fit.cmgp.validate()?;
        self.predict.settings.validate()?;
        if self.t_stars().iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::config(MODULE, "predict.t_stars must be finite and non-negative"));
        }
        Ok(())
    }

    /// Decision times for `predict` and `evaluate`.
    pub fn t_stars(&self) -> &[f64] {
        self.predict.t_stars.as_deref().unwrap_or(&self.simulate.t_stars)
    }

    /// SHA-256 of the canonical JSON form without the paths, so formatting,
    /// comments and output locations do not change it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&Self { paths: Paths::default(), ..self.clone() }).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Applies the `GPCOX_*_DIR` environment overrides.
    pub fn apply_env(&mut self) {
        let set = |var: &str, slot: &mut PathBuf| {
            if let Some(v) = std::env::var_os(var).filter(|v| !v.is_empty()) {
                *slot = PathBuf::from(v);
            }
        };
        set("GPCOX_DATASET_DIR", &mut self.paths.dataset_dir);
        set("GPCOX_MODEL_DIR", &mut self.paths.model_dir);
        set("GPCOX_OUTPUT_DIR", &mut self.paths.output_dir);
    }
}
