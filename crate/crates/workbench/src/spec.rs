//! Experiment files in JSON or TOML. They mirror the core experiment spec
//! except that data may also name a CSV file, resolved relative to the
//! experiment file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsxil_core::decoys::DecoyConfig;
use tsxil_core::experiment::{DataSource, ExperimentSpec, RowSpec, WindowSpec};
use tsxil_core::losses::TaskKind;
use tsxil_core::models::Architecture;
use tsxil_core::synthetic::{BumpTask, SeasonalSeries};
use tsxil_core::train::TrainConfig;

use crate::csvio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataRef {
    Csv { path: PathBuf, task: TaskKind },
    Bump(BumpTask),
    Seasonal(SeasonalSeries),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFile {
    pub name: String,
    pub data: DataRef,
    #[serde(default)]
    pub decoys: Vec<DecoyConfig>,
    pub model: Architecture,
    pub train: TrainConfig,
    pub rows: Vec<RowSpec>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<WindowSpec>,
}

impl ExperimentFile {
    /// Parses TOML when `path` ends in `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            Ok(toml::from_str(&text)?)
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    /// The core spec, reading CSV data relative to `base`.
    pub fn resolve(self, base: &Path) -> Result<ExperimentSpec> {
        let data = match self.data {
            DataRef::Bump(task) => DataSource::Bump(task),
            DataRef::Seasonal(series) => DataSource::Seasonal(series),
            DataRef::Csv { path, task } => {
                let path = base.join(path);
                match task {
                    TaskKind::Classification => DataSource::Classification { dataset: csvio::load_classification(&path)? },
                    TaskKind::Forecasting => DataSource::Series { values: csvio::load_series(&path)? },
                }
            }
        };
        let spec = ExperimentSpec {
            name: self.name,
            data,
            decoys: self.decoys,
            model: self.model,
            train: self.train,
            rows: self.rows,
            seeds: self.seeds,
            windows: self.windows,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentFile::load(path)?.resolve(base)
}
