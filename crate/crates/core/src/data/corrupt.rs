use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{apportion, Dataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    /// Share of rows receiving this noise level.
    pub fraction: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSpec {
    GaussianNoise { levels: Vec<NoiseLevel> },
    ClassImbalance { proportions: Vec<f64> },
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CorruptionSpec::GaussianNoise { levels } => validate_levels(levels),
            CorruptionSpec::ClassImbalance { proportions } => validate_proportions(proportions),
        }
    }
}

fn validate_levels(levels: &[NoiseLevel]) -> Result<()> {
    const OP: &str = "data::inject_noise";
    let mut total = 0.0;
    for l in levels {
        if !(l.fraction >= 0.0 && l.sigma >= 0.0 && l.sigma.is_finite()) {
            return Err(Error::invalid_spec(OP, format!("bad noise level {l:?}")));
        }
        total += l.fraction;
    }
    if total > 1.0 + 1e-12 {
        return Err(Error::invalid_spec(OP, format!("noise fractions sum to {total} > 1")));
    }
    Ok(())
}

fn validate_proportions(proportions: &[f64]) -> Result<()> {
    let sum: f64 = proportions.iter().sum();
    if proportions.is_empty() || proportions.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_spec(
            "data::inject_imbalance",
            format!("proportions must be non-negative and sum to 1, got sum {sum}"),
        ));
    }
    Ok(())
}

/// Additive N(0, σ²) per feature on disjoint random row subsets, one per level.
/// Values are not re-clipped. The returned dataset records the σ applied to
/// every row.
pub fn inject_noise(dataset: &Dataset, levels: &[NoiseLevel], seed: u64) -> Result<Dataset> {
    validate_levels(levels)?;
    let n = dataset.len();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut features = dataset.features().to_owned();
    let mut record = dataset
        .noise_record()
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; n]);
    let mut cumulative = 0.0;
    let mut start = 0;
    for level in levels {
        cumulative += level.fraction;
        let end = ((cumulative * n as f64).round() as usize).min(n);
        for &row in &order[start..end] {
            if level.sigma > 0.0 {
                for v in features.row_mut(row).iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += level.sigma * z;
                }
            }
            record[row] = level.sigma;
        }
        start = end;
    }
    let mut out = dataset.clone();
    out.set_features(features, record);
    Ok(out)
}

/// Resample `target_size` rows so the class histogram follows `proportions`
/// (largest-remainder rounding). Output rows are shuffled.
pub fn inject_imbalance(
    dataset: &Dataset,
    proportions: &[f64],
    target_size: usize,
    seed: u64,
) -> Result<Dataset> {
    const OP: &str = "data::inject_imbalance";
    validate_proportions(proportions)?;
    if proportions.len() != dataset.class_count() {
        return Err(Error::DimensionMismatch {
            op: OP,
            expected: dataset.class_count(),
            got: proportions.len(),
        });
    }
    let mut members = dataset.class_members(OP)?;
    let counts = apportion(proportions, target_size);
    for (class, (&want, have)) in counts.iter().zip(&members).enumerate() {
        if want > have.len() {
            return Err(Error::invalid_spec(
                OP,
                format!("class {class} needs {want} instances, only {} available", have.len()),
            ));
        }
    }
    let mut rng = seed::rng(seed);
    let mut picked = Vec::with_capacity(target_size);
    for (have, &want) in members.iter_mut().zip(&counts) {
        have.shuffle(&mut rng);
        picked.extend_from_slice(&have[..want]);
    }
    picked.shuffle(&mut rng);
    dataset.subset(&picked)
}
