//! Experiment configuration documents (TOML).
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! `--set key.path=value` overrides in command-line order, then dedicated
//! flags such as `--rate` or `--seeds`. Relative data paths are resolved
//! against the directory holding the config file. Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use impfilter_core::ap::TrainingConfig;
use impfilter_core::datasets::{synth_flow_leaks, synth_gaussians, Dataset};
use impfilter_core::energy::EnergyParams;
use impfilter_core::filter::FilterConfig;
use impfilter_core::model::{Activation, LossKind, ModelConfig, OptimizerConfig, OptimizerKind};
use impfilter_core::simulator::{Scheme, SimConfig, TransmissionMode};
use serde::{Deserialize, Serialize};

use crate::csv_data::{load_csv, LabelColumn};
use crate::error::{CliError, Result};
use crate::idx::load_idx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: DataSource,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    SyntheticGaussians {
        means: Vec<Vec<f64>>,
        scales: Vec<f64>,
        weights: Vec<f64>,
        count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "yes")]
        normalize: bool,
    },
    FlowLeaks {
        links: usize,
        hours: usize,
        leak_fraction: f64,
        leak_magnitude: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
        #[serde(default = "yes")]
        has_header: bool,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub nodes: usize,
    pub samples_per_interval: usize,
    pub rounds: u64,
    pub test_fraction: f64,
    pub cycle: bool,
    pub transmission: TransmissionMode,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            nodes: 4,
            samples_per_interval: 100,
            rounds: 10,
            test_fraction: 0.2,
            cycle: false,
            transmission: TransmissionMode::Quota,
        }
    }
}

/// Hidden layers only; input and output widths come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub loss: LossKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![8],
            activation: Activation::Relu,
            dropout_rate: 0.0,
            loss: LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Absent trains on the whole interval batch at once.
    pub batch_size: Option<usize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            epochs: 1,
            batch_size: Some(16),
        }
    }
}

impl TrainingSection {
    pub fn to_config(&self) -> TrainingConfig {
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::sgd(self.learning_rate),
            OptimizerKind::Adam => OptimizerConfig::adam(self.learning_rate),
        };
        TrainingConfig {
            optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub schemes: Vec<Scheme>,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Relative packet-count spread tolerated between rate-matched schemes.
    pub fairness_tolerance: f64,
    /// Relative excess over `R` tolerated in a node's transmit fraction.
    pub rate_slack: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Importance, Scheme::Uniform, Scheme::Genie],
            rates: vec![0.3],
            seeds: vec![0],
            fairness_tolerance: 0.05,
            rate_slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Scores from a model trained by one importance run on the data.
    Model,
    /// A smooth synthetic score field on the unit square.
    Smooth,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub field: FieldKind,
    pub queries: usize,
    pub delta: f64,
    pub seed: u64,
    pub report: PathBuf,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            field: FieldKind::Smooth,
            queries: 1000,
            delta: 0.05,
            seed: 0,
            report: PathBuf::from("bounds.txt"),
        }
    }
}

/// Sets `path` (dot-separated) in `table` to `raw`, read as a TOML value
/// when it parses as one and as a plain string otherwise.
pub fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cursor = table;
    for key in parents {
        let entry = cursor
            .entry((*key).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{key}` is not a table")))?;
    }
    cursor.insert((*last).to_owned(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, overrides, resolves and validates a config file.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parse_err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let mut spec: ExperimentSpec = match table.try_into() {
            Ok(spec) => spec,
            Err(e) => {
                // The file alone gives messages with line numbers.
                let message = match toml::from_str::<ExperimentSpec>(&text) {
                    Err(file_err) => file_err.to_string(),
                    Ok(_) => format!("after overrides: {e}"),
                };
                return Err(parse_err(message));
            }
        };
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        spec.resolve_paths(base);
        spec.validate()?;
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Csv { path, .. } => fix(path),
            DataSource::Idx { images, labels } => {
                fix(images);
                fix(labels);
            }
            _ => {}
        }
    }

    /// Structural checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        let missing = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!("referenced file {} does not exist", p.display())))
            }
        };
        match &self.data {
            DataSource::Csv { path, .. } => missing(path)?,
            DataSource::Idx { images, labels } => {
                missing(images)?;
                missing(labels)?;
            }
            _ => {}
        }
        let e = &self.experiment;
        if e.schemes.is_empty() || e.rates.is_empty() || e.seeds.is_empty() {
            return Err(CliError::Config("experiment needs at least one scheme, rate and seed".into()));
        }
        if let Some(r) = e.rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(CliError::Config(format!("rate {r} outside (0, 1]")));
        }
        if self.filter.neighbors >= self.filter.buffer_size {
            return Err(CliError::Config(format!(
                "filter.neighbors ({}) must be below filter.buffer_size ({})",
                self.filter.neighbors, self.filter.buffer_size
            )));
        }
        if !(self.diagnose.delta > 0.0 && self.diagnose.delta < 1.0) {
            return Err(CliError::Config("diagnose.delta must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut data = match &self.data {
            DataSource::SyntheticGaussians { means, scales, weights, count, seed, .. } => {
                synth_gaussians(means, scales, weights, *count, *seed)?
            }
            DataSource::FlowLeaks { links, hours, leak_fraction, leak_magnitude, seed, .. } => {
                synth_flow_leaks(*links, *hours, *leak_fraction, *leak_magnitude, *seed)?
            }
            DataSource::Csv { path, label_column, has_header, .. } => load_csv(path, label_column, *has_header)?,
            DataSource::Idx { images, labels } => load_idx(images, labels)?,
        };
        let normalize = match &self.data {
            DataSource::SyntheticGaussians { normalize, .. }
            | DataSource::FlowLeaks { normalize, .. }
            | DataSource::Csv { normalize, .. } => *normalize,
            DataSource::Idx { .. } => false,
        };
        if normalize {
            data.normalize();
        }
        Ok(data)
    }

    /// The simulator configuration for one run on `data`.
    pub fn sim_config(&self, data: &Dataset, scheme: Scheme, rate: f64, seed: u64) -> Result<SimConfig> {
        let mut layer_sizes = vec![data.dim()];
        layer_sizes.extend_from_slice(&self.model.hidden);
        layer_sizes.push(data.class_count());
        let config = SimConfig {
            nodes: self.sim.nodes,
            samples_per_interval: self.sim.samples_per_interval,
            rounds: self.sim.rounds,
            rate,
            scheme,
            transmission: self.sim.transmission,
            filter: self.filter,
            model: ModelConfig {
                layer_sizes,
                activation: self.model.activation,
                dropout_rate: self.model.dropout_rate,
                loss: self.model.loss,
                seed: 0,
            },
            training: self.training.to_config(),
            energy: self.energy,
            seed,
            test_fraction: self.sim.test_fraction,
            cycle: self.sim.cycle,
        };
        config.validate()?;
        Ok(config)
    }
}
