//! Experiment configuration: a TOML file, `FEDMP__` environment overrides,
//! then command-line flags, validated against a typed schema.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use fedmp_core::algo::{FederationConfig, DEFAULT_STAGE_EPOCHS};
use fedmp_core::data::DatasetSpec;
use fedmp_core::privacy::AttackConfig;
use fedmp_core::NetworkSpec;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

pub const ENV_PREFIX: &str = "FEDMP__";

/// Keys of `[federation]` that the driver fills in itself.
const DERIVED_FEDERATION_KEYS: [&str; 3] = ["num_clients", "num_classes", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fedavg,
    #[default]
    Fedmp,
    Fewshot,
    Single,
    Centralized,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fedavg => "fedavg",
            Mode::Fedmp => "fedmp",
            Mode::Fewshot => "fewshot",
            Mode::Single => "single",
            Mode::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Widths of the hidden affine layers, each followed by a ReLU.
    pub hidden: Vec<usize>,
    /// Layer index where the extractor ends.
    pub split_index: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 16],
            split_index: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// Local epochs before each few-shot communication.
    pub stage_epochs: Vec<usize>,
    /// Local epochs for `single`; defaults to the few-shot total.
    pub single_epochs: Option<usize>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            stage_epochs: DEFAULT_STAGE_EPOCHS.to_vec(),
            single_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// Split layers to attack, one leakage row each.
    pub splits: Vec<usize>,
    pub decoder_hidden: Option<Vec<usize>>,
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        let d = AttackConfig::default();
        Self {
            splits: vec![2, 4, 6],
            decoder_hidden: d.decoder_hidden,
            train_fraction: d.train_fraction,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub attack: AttackSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_out() -> PathBuf {
    PathBuf::from("fedmp-out")
}

/// Flag values that take precedence over the file and the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let env: Vec<(String, String)> = std::env::vars().collect();
        Self::from_str_with_env(&text, &env, overrides)
    }

    /// Parses `text`, applies `FEDMP__section__key=value` pairs from `env`,
    /// then the flag overrides, and validates the result.
    pub fn from_str_with_env(
        text: &str,
        env: &[(String, String)],
        overrides: &Overrides,
    ) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for (key, value) in env {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                apply_env(&mut table, rest, value)?;
            }
        }
        if let Some(toml::Value::Table(fed)) = table.get("federation") {
            if let Some(k) = DERIVED_FEDERATION_KEYS
                .iter()
                .find(|k| fed.contains_key(**k))
            {
                return Err(CliError::Config(format!(
                    "federation.{k}: set by the driver from the dataset and seed list; remove it"
                )));
            }
        }
        let mut config: ExperimentConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table))
                .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
        if let Some(seed) = overrides.seed {
            config.seeds = vec![seed];
        }
        if let Some(mode) = overrides.mode {
            config.mode = mode;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad(format!("seeds: duplicate entries in {:?}", self.seeds));
        }
        self.dataset
            .validate()
            .map_err(|e| CliError::Config(format!("dataset: {e}")))?;
        self.network_spec()
            .map_err(|e| CliError::Config(format!("network: {e}")))?;
        self.federation_for(self.seeds[0])
            .validate()
            .map_err(|e| CliError::Config(format!("federation: {e}")))?;
        if self.schedule.stage_epochs.is_empty() || self.schedule.stage_epochs.contains(&0) {
            return bad(format!(
                "schedule.stage_epochs: need at least one positive entry, got {:?}",
                self.schedule.stage_epochs
            ));
        }
        if self.schedule.single_epochs == Some(0) {
            return bad("schedule.single_epochs: must be at least 1".into());
        }
        if self.attack.splits.is_empty() {
            return bad("attack.splits: at least one split layer is required".into());
        }
        for (i, &split) in self.attack.splits.iter().enumerate() {
            self.attack_config(split, 0)
                .validate()
                .map_err(|e| CliError::Config(format!("attack.splits[{i}]: {e}")))?;
        }
        Ok(())
    }

    pub fn network_spec(&self) -> fedmp_core::Result<NetworkSpec> {
        NetworkSpec::mlp(
            self.dataset.input_dim,
            &self.network.hidden,
            self.dataset.num_classes,
            self.network.split_index,
        )
    }

    /// The `[federation]` table completed with the dataset shape and `seed`.
    pub fn federation_for(&self, seed: u64) -> FederationConfig {
        FederationConfig {
            num_clients: self.dataset.num_clients,
            num_classes: self.dataset.num_classes,
            seed,
            ..self.federation.clone()
        }
    }

    pub fn single_epochs(&self) -> usize {
        self.schedule
            .single_epochs
            .unwrap_or_else(|| self.schedule.stage_epochs.iter().sum())
    }

    pub fn attack_config(&self, split_index: usize, seed: u64) -> AttackConfig {
        AttackConfig {
            split_index,
            decoder_hidden: self.attack.decoder_hidden.clone(),
            train_fraction: self.attack.train_fraction,
            epochs: self.attack.epochs,
            batch_size: self.attack.batch_size,
            learning_rate: self.attack.learning_rate,
            seed,
        }
    }
}

/// `rest` is the variable name after the prefix, e.g. `FEDERATION__ROUNDS`.
/// Values are read as TOML literals and fall back to plain strings.
fn apply_env(table: &mut toml::Table, rest: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!(
            "{ENV_PREFIX}{rest}: empty key segment"
        )));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path
        .split_last()
        .expect("split yields at least one segment");
    let mut node = table;
    for (depth, key) in parents.iter().enumerate() {
        let entry = node
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!(
                "{ENV_PREFIX}{rest}: {} is not a table",
                path[..=depth].join(".")
            ))
        })?;
    }
    node.insert(last.clone(), value);
    Ok(())
}
