//! Experiment configuration: one TOML document whose key hierarchy mirrors
//! the component specs. Any key can be overridden with `dotted.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CorruptionSpec, LabelColumn};
use crate::deepsets::{DeepSetsConfig, FitConfig};
use crate::diagnostics::TransferSpec;
use crate::error::{Error, Result};
use crate::greedy::Strategy;
use crate::proxy::{Architecture, MetricSpec, ProxySpec};
use crate::utility::SizePolicy;

const OP: &str = "config::load";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Blobs {
        samples: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label: LabelColumn,
        #[serde(default = "yes")]
        has_header: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub pool: usize,
    /// Held-out evaluation rows; `max(500, pool / 4)` when absent.
    #[serde(default)]
    pub test: Option<usize>,
}

impl SplitConfig {
    pub fn test_size(&self) -> usize {
        self.test.unwrap_or_else(|| (self.pool / 4).max(500))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub subsets: usize,
    #[serde(default = "default_alpha")]
    pub alpha: [f64; 2],
    #[serde(default)]
    pub size: SizePolicy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityModelConfig {
    pub network: DeepSetsConfig,
    pub fit: FitConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default)]
    pub budgets: Vec<usize>,
    /// Adds this many evenly spaced budgets up to half the pool.
    #[serde(default)]
    pub sweep: Option<usize>,
    /// Defaults to the labeled training split size.
    #[serde(default)]
    pub block_size: Option<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    /// Clean source points planted with noisy copies; 0 disables planting.
    pub groups: usize,
    pub sigmas: Vec<f64>,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            groups: 0,
            sigmas: vec![0.25, 0.6, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub curve_probes: usize,
    pub curve_sizes: usize,
    pub transfer: TransferSpec,
    /// Second learner compared against the proxy.
    pub transfer_model: ProxySpec,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            curve_probes: 10,
            curve_sizes: 10,
            transfer: TransferSpec::default(),
            transfer_model: ProxySpec {
                architecture: Architecture::Mlp { hidden: vec![32] },
                ..ProxySpec::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub split: SplitConfig,
    #[serde(default)]
    pub corruptions: Vec<CorruptionSpec>,
    /// Whether Gaussian-noise corruptions also hit the labeled training split.
    #[serde(default = "yes")]
    pub corrupt_labeled: bool,
    #[serde(default)]
    pub proxy: ProxySpec,
    #[serde(default)]
    pub metric: MetricSpec,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub utility_model: UtilityModelConfig,
    pub selection: SelectionConfig,
    #[serde(default)]
    pub target: ProxySpec,
    #[serde(default)]
    pub planted: PlantedConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_alpha() -> [f64; 2] {
    [1.0, 20.0]
}

fn default_epsilon() -> f64 {
    1e-5
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Dulo, Strategy::Random]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("oneround-out")
}

/// Split `--a.b=value` / `a.b=value` into key and raw value.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let body = arg.strip_prefix("--").unwrap_or(arg);
    match body.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(Error::config(OP, format!("override {arg:?} is not of the form --dotted.key=value"))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::config(OP, format!("override {key:?}: {part:?} is not a table"))),
        };
    }
    table.insert(last.to_string(), parse_value(raw));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::config(OP, e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut root, key, value)?;
        }
        let config: ExperimentConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(OP, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(OP, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config(OP, "repeats must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config(OP, "workers must be at least 1"));
        }
        if self.split.train == 0 || self.split.val == 0 || self.split.pool == 0 {
            return Err(Error::config(OP, "split sizes must be positive"));
        }
        if self.sampler.subsets == 0 {
            return Err(Error::config(OP, "sampler.subsets must be at least 1"));
        }
        for c in &self.corruptions {
            c.validate()?;
        }
        if self.corruptions.iter().filter(|c| matches!(c, CorruptionSpec::ClassImbalance { .. })).count() > 1 {
            return Err(Error::config(OP, "at most one class_imbalance corruption"));
        }
        self.proxy.validate()?;
        self.target.validate()?;
        self.diagnostics.transfer_model.validate()?;
        if self.budgets().is_empty() {
            return Err(Error::config(OP, "selection needs at least one budget"));
        }
        if self.selection.strategies.is_empty() {
            return Err(Error::config(OP, "selection needs at least one strategy"));
        }
        let slots = self.planted.groups * (1 + self.planted.sigmas.len());
        if slots > self.split.pool {
            return Err(Error::config(OP, format!("planted groups need {slots} pool rows, pool has {}", self.split.pool)));
        }
        if self.planted.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config(OP, "planted sigmas must be finite and non-negative"));
        }
        Ok(())
    }

    /// Explicit budgets plus the sweep, sorted and deduplicated.
    pub fn budgets(&self) -> Vec<usize> {
        let mut budgets = self.selection.budgets.clone();
        if let Some(steps) = self.selection.sweep.filter(|&s| s > 0) {
            let half = self.split.pool / 2;
            budgets.extend((1..=steps).map(|i| half * i / steps).filter(|&b| b > 0));
        }
        budgets.sort_unstable();
        budgets.dedup();
        budgets
    }

    pub fn block_size(&self) -> usize {
        self.selection.block_size.unwrap_or(self.split.train)
    }

    /// Hash of every setting that can change an output; worker count and
    /// output location are excluded.
    pub fn hash(&self) -> String {
        hash_value(self.hash_view(false))
    }

    /// Hash of the settings that determine the data, corpus and utility model.
    pub fn upstream_hash(&self) -> String {
        hash_value(self.hash_view(true))
    }

    fn hash_view(&self, upstream_only: bool) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is an object");
        map.remove("workers");
        map.remove("output_dir");
        if upstream_only {
            for key in ["selection", "target", "diagnostics"] {
                map.remove(key);
            }
        }
        value
    }
}

fn hash_value(value: serde_json::Value) -> String {
    let bytes = serde_json::to_vec(&value).expect("json serializes");
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
