//! Cheap classifiers whose validation accuracy measures how useful a training
//! subset is.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, DenseNet, Loss, OptimizerConfig, OptimizerKind, Targets, TrainConfig};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    LogisticRegression,
    Mlp { hidden: Vec<usize> },
}

/// How the training seed of a proxy run is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every subset trains from the global seed.
    Fixed,
    /// Seed mixes the global seed with the subset's sorted indices.
    #[default]
    PerSubset,
}

impl SeedPolicy {
    pub fn resolve(self, global: u64, sorted_subset: &[usize]) -> u64 {
        match self {
            SeedPolicy::Fixed => global,
            SeedPolicy::PerSubset => seed::derive_from_indices(global, sorted_subset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySpec {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed_policy: SeedPolicy,
}

impl Default for ProxySpec {
    /// Logistic regression, Adam at 1e-3, batch 32, 30 epochs.
    fn default() -> Self {
        ProxySpec {
            architecture: Architecture::LogisticRegression,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed_policy: SeedPolicy::PerSubset,
        }
    }
}

impl ProxySpec {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "proxy::spec";
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid_spec(OP, "epochs and batch size must be at least 1"));
        }
        if let Architecture::Mlp { hidden } = &self.architecture {
            if hidden.contains(&0) {
                return Err(Error::invalid_spec(OP, "hidden layer sizes must be positive"));
            }
        }
        self.optimizer_config().validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::sgd(self.learning_rate),
            OptimizerKind::Adam => OptimizerConfig::adam(self.learning_rate),
        }
    }

    pub fn layer_sizes(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        if let Architecture::Mlp { hidden } = &self.architecture {
            sizes.extend(hidden);
        }
        sizes.push(classes);
        sizes
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    #[default]
    Top1Accuracy,
    TopkAccuracy { k: usize },
}

impl MetricSpec {
    fn k(self) -> usize {
        match self {
            MetricSpec::Top1Accuracy => 1,
            MetricSpec::TopkAccuracy { k } => k,
        }
    }

    pub fn validate(self, classes: usize) -> Result<()> {
        let k = self.k();
        if k == 0 || k > classes {
            return Err(Error::invalid_spec("proxy::metric", format!("k={k} outside [1, {classes}]")));
        }
        Ok(())
    }
}

/// Train a fresh classifier on `(features, labels)`; init and shuffling use
/// `seed`.
pub fn train_classifier(
    spec: &ProxySpec,
    features: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    seed: u64,
) -> Result<DenseNet> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut net = DenseNet::random(&spec.layer_sizes(features.ncols(), classes), Activation::Relu, &mut rng)?;
    let config = TrainConfig {
        optimizer: spec.optimizer_config(),
        epochs: spec.epochs,
        batch_size: spec.batch_size,
    };
    nn::train(&mut net, features, Targets::Classes(labels), Loss::SoftmaxCrossEntropy, &config, &mut rng)?;
    Ok(net)
}

/// Whether `label` ranks among the top `k` logits; ties go to the lower class
/// index.
fn in_top_k(logits: &[f64], label: usize, k: usize) -> bool {
    let target = logits[label];
    let ahead = logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    ahead < k
}

/// Fraction of rows whose label is in the top-k of the corresponding logits.
pub fn score_logits(logits: &Array2<f64>, labels: &[usize], metric: MetricSpec) -> Result<f64> {
    const OP: &str = "proxy::score";
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: OP,
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid_input(OP, "no rows to score"));
    }
    metric.validate(logits.ncols())?;
    let k = metric.k();
    let hits = logits
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| in_top_k(row.as_slice().expect("standard layout"), y, k))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn score(net: &DenseNet, dataset: &Dataset, metric: MetricSpec) -> Result<f64> {
    let labels = dataset.require_labels("proxy::score")?;
    if net.output_dim() != dataset.class_count() {
        return Err(Error::DimensionMismatch {
            op: "proxy::score",
            expected: dataset.class_count(),
            got: net.output_dim(),
        });
    }
    let logits = net.forward(dataset.features())?;
    score_logits(&logits.as_standard_layout().to_owned(), labels, metric)
}

/// u(A(S), L_val): train on the rows `subset` of `train`, score on `val`.
pub fn train_and_score(
    subset: &[usize],
    train: &Dataset,
    val: &Dataset,
    spec: &ProxySpec,
    metric: MetricSpec,
    seed: u64,
) -> Result<f64> {
    const OP: &str = "proxy::train_and_score";
    if subset.is_empty() {
        return Err(Error::invalid_input(OP, "empty subset"));
    }
    let mut seen = vec![false; train.len()];
    for &i in subset {
        if i >= train.len() {
            return Err(Error::invalid_input(OP, format!("index {i} outside training split of {}", train.len())));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid_input(OP, format!("duplicate index {i}")));
        }
    }
    let chosen = train.subset(subset)?;
    let labels = chosen.require_labels(OP)?;
    let net = train_classifier(spec, chosen.features(), labels, train.class_count(), seed)?;
    score(&net, val, metric)
}
