//! Learning the data-utility function from retrained proxies.
//!
//! Draw `T` subsets of the labeled training split with Dirichlet-distributed
//! class proportions, train and score a proxy on each, and regress the set
//! model on the resulting (subset, utility) corpus.

use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{read_corpus, CorpusWriter, SubsetSample};
use crate::data::{apportion, histogram, Dataset};
use crate::deepsets::{self, corpus_mse, DeepSetsConfig, FitConfig, FitReport, UtilityModel};
use crate::error::{Error, Result};
use crate::par;
use crate::proxy::{self, MetricSpec, ProxySpec};
use crate::seed::{self, Rng};
use crate::stats;

/// How many points each sampled subset holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizePolicy {
    /// Uniform integer in `[min·n, max·n]` for a training split of `n` rows.
    Fraction { min: f64, max: f64 },
    /// Uniform integer in `[min, max]`.
    Uniform { min: usize, max: usize },
    Fixed { size: usize },
}

impl Default for SizePolicy {
    fn default() -> Self {
        SizePolicy::Fraction { min: 0.2, max: 1.0 }
    }
}

impl SizePolicy {
    /// Inclusive size range for a training split of `n` rows.
    pub fn range(&self, n: usize) -> Result<(usize, usize)> {
        const OP: &str = "utility::size_policy";
        let (lo, hi) = match *self {
            SizePolicy::Fraction { min, max } => {
                if !(0.0 < min && min <= max && max <= 1.0) {
                    return Err(Error::invalid_spec(OP, format!("fractions [{min}, {max}] must satisfy 0 < min <= max <= 1")));
                }
                (((min * n as f64).round() as usize).max(1), (max * n as f64).round() as usize)
            }
            SizePolicy::Uniform { min, max } => (min, max),
            SizePolicy::Fixed { size } => (size, size),
        };
        if lo == 0 || lo > hi {
            return Err(Error::invalid_spec(OP, format!("empty size range [{lo}, {hi}]")));
        }
        if hi > n {
            return Err(Error::invalid_spec(OP, format!("subset size {hi} exceeds training split of {n}")));
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    /// Number of subsets `T`.
    pub subsets: usize,
    /// Per-class Dirichlet concentrations are drawn uniformly from this range.
    #[serde(default = "default_alpha")]
    pub alpha: [f64; 2],
    #[serde(default)]
    pub size: SizePolicy,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> [f64; 2] {
    [1.0, 20.0]
}

impl SamplerSpec {
    pub fn new(subsets: usize, seed: u64) -> Self {
        SamplerSpec {
            subsets,
            alpha: default_alpha(),
            size: SizePolicy::default(),
            seed,
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        const OP: &str = "utility::sampler";
        if self.subsets == 0 {
            return Err(Error::invalid_spec(OP, "subset count T must be at least 1"));
        }
        let [lo, hi] = self.alpha;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid_spec(OP, format!("alpha range [{lo}, {hi}] must be positive and ordered")));
        }
        self.size.range(train_len).map(|_| ())
    }
}

/// Class proportions `p ~ Dir(α_1, …, α_K)` with each `α_k ~ U[lo, hi]`,
/// sampled as normalized Gamma(α_k, 1) draws.
pub fn sample_class_proportions(classes: usize, alpha: [f64; 2], rng: &mut Rng) -> Vec<f64> {
    if classes == 1 {
        return vec![1.0];
    }
    let [lo, hi] = alpha;
    loop {
        let draws: Vec<f64> = (0..classes)
            .map(|_| {
                let a = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                Gamma::new(a, 1.0).expect("positive shape").sample(rng)
            })
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.iter().map(|g| g / total).collect();
        }
    }
}

/// Per-class counts for `size` points: largest-remainder rounding of
/// `proportions · size`, capped at what each class has, with any deficit
/// re-apportioned over classes that still have room.
pub fn class_counts(proportions: &[f64], available: &[usize], size: usize) -> Vec<usize> {
    let mut counts = apportion(proportions, size);
    loop {
        let mut deficit = 0;
        for (c, &a) in counts.iter_mut().zip(available) {
            if *c > a {
                deficit += *c - a;
                *c = a;
            }
        }
        if deficit == 0 {
            return counts;
        }
        let room: Vec<usize> = counts.iter().zip(available).map(|(c, a)| a - c).collect();
        if room.iter().all(|&r| r == 0) {
            return counts;
        }
        let mut weights: Vec<f64> = proportions
            .iter()
            .zip(&room)
            .map(|(&p, &r)| if r > 0 { p } else { 0.0 })
            .collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            weights = room.iter().map(|&r| r as f64).collect();
        }
        for (c, extra) in counts.iter_mut().zip(apportion(&weights, deficit)) {
            *c += extra;
        }
    }
}

/// Draw `size` rows of `train` with class sizes following `proportions`.
/// Returned indices are sorted.
pub fn draw_subset(train: &Dataset, proportions: &[f64], size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    const OP: &str = "utility::draw_subset";
    if size > train.len() {
        return Err(Error::invalid_spec(OP, format!("subset size {size} exceeds {} rows", train.len())));
    }
    if proportions.len() != train.class_count() {
        return Err(Error::DimensionMismatch {
            op: OP,
            expected: train.class_count(),
            got: proportions.len(),
        });
    }
    let members = train.class_members(OP)?;
    let available: Vec<usize> = members.iter().map(Vec::len).collect();
    let counts = class_counts(proportions, &available, size);
    let mut picked = Vec::with_capacity(size);
    for (rows, &count) in members.iter().zip(&counts) {
        picked.extend(rand::seq::index::sample(rng, rows.len(), count).iter().map(|i| rows[i]));
    }
    picked.sort_unstable();
    Ok(picked)
}

/// The random draw behind corpus record `t`: sorted indices only, no training.
pub fn draw_for(t: usize, train: &Dataset, sampler: &SamplerSpec) -> Result<Vec<usize>> {
    let mut rng = seed::rng(seed::derive(sampler.seed, &[t as u64]));
    let proportions = sample_class_proportions(train.class_count(), sampler.alpha, &mut rng);
    let (lo, hi) = sampler.size.range(train.len())?;
    let size = rng.random_range(lo..=hi);
    draw_subset(train, &proportions, size, &mut rng)
}

fn make_sample(
    t: usize,
    train: &Dataset,
    val: &Dataset,
    sampler: &SamplerSpec,
    proxy_spec: &ProxySpec,
    metric: MetricSpec,
) -> Result<SubsetSample> {
    let indices = draw_for(t, train, sampler)?;
    let seed = proxy_spec.seed_policy.resolve(sampler.seed, &indices);
    let utility = proxy::train_and_score(&indices, train, val, proxy_spec, metric, seed)?;
    let labels = train.require_labels("utility::build_corpus")?;
    let chosen: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    Ok(SubsetSample {
        t,
        seed,
        class_histogram: histogram(&chosen, train.class_count()),
        indices,
        utility,
    })
}

/// Corpus of `sampler.subsets` records, ordered by `t`. Every record depends
/// only on `(sampler.seed, t)`, so output is identical for any `workers`.
///
/// With `sink`, records are appended to that file as they complete; records
/// already present there are reused and the run resumes after them.
pub fn build_corpus(
    train: &Dataset,
    val: &Dataset,
    sampler: &SamplerSpec,
    proxy_spec: &ProxySpec,
    metric: MetricSpec,
    workers: usize,
    sink: Option<&Path>,
) -> Result<Vec<SubsetSample>> {
    sampler.validate(train.len())?;
    proxy_spec.validate()?;
    metric.validate(train.class_count())?;
    train.require_labels("utility::build_corpus")?;
    val.require_labels("utility::build_corpus")?;

    let total = sampler.subsets;
    let mut samples = Vec::with_capacity(total);
    let mut writer = match sink {
        Some(path) if path.exists() => {
            samples = read_corpus(path)?;
            samples.truncate(total);
            Some(CorpusWriter::append(path)?)
        }
        Some(path) => Some(CorpusWriter::create(path)?),
        None => None,
    };

    let chunk = (workers.max(1) * 16).max(64);
    while samples.len() < total {
        let start = samples.len();
        let end = (start + chunk).min(total);
        let results = par::map_indexed(end - start, workers, |i| {
            make_sample(start + i, train, val, sampler, proxy_spec, metric)
        });
        for result in results {
            match result {
                Ok(sample) => {
                    if let Some(w) = writer.as_mut() {
                        w.write(&sample)?;
                    }
                    samples.push(sample);
                }
                Err(err) => {
                    if let Some(w) = writer.as_mut() {
                        w.flush()?;
                    }
                    return Err(Error::PartialCorpus {
                        completed: samples.len(),
                        total,
                        source: Box::new(err),
                    });
                }
            }
        }
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
    }
    Ok(samples)
}

/// Held-out quality of a fitted utility model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityFitReport {
    pub train_size: usize,
    pub heldout_size: usize,
    pub heldout_mse: Option<f64>,
    pub heldout_spearman: Option<f64>,
    pub fit: FitReport,
}

/// Fit on 90% of the corpus and report error and rank agreement on the other
/// 10%.
pub fn fit_with_holdout(
    corpus: &[SubsetSample],
    train_features: ArrayView2<f64>,
    config: &DeepSetsConfig,
    fit_config: &FitConfig,
    seed: u64,
) -> Result<(UtilityModel, UtilityFitReport)> {
    if corpus.is_empty() {
        return Err(Error::invalid_input("utility::learn_utility", "empty corpus"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[0x401d])));
    let heldout_count = if corpus.len() >= 2 {
        ((corpus.len() as f64 * 0.1).round() as usize).max(1)
    } else {
        0
    };
    let (held, kept) = order.split_at(heldout_count);
    let heldout: Vec<SubsetSample> = held.iter().map(|&i| corpus[i].clone()).collect();
    let train_part: Vec<SubsetSample> = kept.iter().map(|&i| corpus[i].clone()).collect();

    let (model, fit) = deepsets::fit(&train_part, train_features, config, fit_config, seed)?;
    let (heldout_mse, heldout_spearman) = if heldout.is_empty() {
        (None, None)
    } else {
        let subsets: Vec<&[usize]> = heldout.iter().map(|s| s.indices.as_slice()).collect();
        let preds = model.predict_subsets(train_features, &subsets)?;
        let truth: Vec<f64> = heldout.iter().map(|s| s.utility).collect();
        (
            Some(corpus_mse(&model, train_features, &heldout)?),
            stats::spearman(&preds, &truth),
        )
    };
    Ok((
        model,
        UtilityFitReport {
            train_size: train_part.len(),
            heldout_size: heldout.len(),
            heldout_mse,
            heldout_spearman,
            fit,
        },
    ))
}

pub struct LearnedUtility {
    pub model: UtilityModel,
    pub report: UtilityFitReport,
    pub corpus: Vec<SubsetSample>,
}

/// Corpus construction followed by the set-model fit.
#[allow(clippy::too_many_arguments)]
pub fn learn_utility(
    train: &Dataset,
    val: &Dataset,
    sampler: &SamplerSpec,
    proxy_spec: &ProxySpec,
    metric: MetricSpec,
    config: &DeepSetsConfig,
    fit_config: &FitConfig,
    seed: u64,
    workers: usize,
) -> Result<LearnedUtility> {
    let corpus = build_corpus(train, val, sampler, proxy_spec, metric, workers, None)?;
    let (model, report) = fit_with_holdout(&corpus, train.features(), config, fit_config, seed)?;
    Ok(LearnedUtility { model, report, corpus })
}
