use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rationale::data::SynthConfig;
use rationale::model::ModelConfig;
use rationale::training::{GradCheckConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a subcommand can read from its TOML file. Each subcommand
/// uses only the sections it needs; unknown keys anywhere are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Corpus used by train, tune, eval and stats unless `--corpus` is given.
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthConfig,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    pub tune: Option<TuneConfig>,
    #[serde(default)]
    pub gradcheck: GradCheckConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of seeds `train` runs; more than one aggregates test reports.
    pub runs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { runs: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub grid: Vec<GridEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    /// A `LossWeights` field, e.g. `lambda_s`.
    pub weight: String,
    pub values: Vec<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        match &self.model {
            Some(m) => Ok(m),
            None => bail!("config has no [model] section"),
        }
    }

    pub fn corpus(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        match flag.or_else(|| self.corpus.clone()) {
            Some(p) => Ok(p),
            None => bail!("no corpus given: pass --corpus or set `corpus` in the config"),
        }
    }

    pub fn grid(&self) -> Result<Vec<(String, Vec<f64>)>> {
        match &self.tune {
            Some(t) if !t.grid.is_empty() => Ok(t.grid.iter().map(|g| (g.weight.clone(), g.values.clone())).collect()),
            _ => bail!("config has no [[tune.grid]] entries"),
        }
    }
}
