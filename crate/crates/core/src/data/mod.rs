//! Datasets, splits and corruption protocols.

mod cache;
mod corrupt;
mod csv;
mod idx;
mod split;
mod synth;

pub use self::cache::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use self::corrupt::{inject_imbalance, inject_noise, CorruptionSpec, NoiseLevel};
pub use self::csv::{load_csv, read_csv, LabelColumn};
pub use self::idx::{load_idx, read_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use self::split::{split, SplitSpec, Splits};
pub use self::synth::make_blobs;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Feature matrix with optional integer labels in `[0, class_count)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    class_count: usize,
    provenance: String,
    noise: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        class_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        const OP: &str = "data::new";
        if class_count == 0 {
            return Err(Error::invalid_input(OP, "class count must be positive"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_input(OP, "features must be finite"));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(Error::DimensionMismatch {
                    op: OP,
                    expected: features.nrows(),
                    got: labels.len(),
                });
            }
            if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
                return Err(Error::invalid_input(
                    OP,
                    format!("label {bad} outside [0, {class_count})"),
                ));
            }
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            provenance: provenance.into(),
            noise: None,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self, op: &'static str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::invalid_input(op, "dataset has no labels"))
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Per-row noise sigma applied by [`inject_noise`]; 0 for clean rows.
    pub fn noise_record(&self) -> Option<&[f64]> {
        self.noise.as_deref()
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid_input(
                "data::subset",
                format!("index {bad} out of range for {} rows", self.len()),
            ));
        }
        Ok(Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
            provenance: self.provenance.clone(),
            noise: self
                .noise
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        })
    }

    /// Stack `other` below `self`. Both must agree on dimension, class count
    /// and label presence.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        const OP: &str = "data::concat";
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                op: OP,
                expected: self.dim(),
                got: other.dim(),
            });
        }
        if self.class_count != other.class_count || self.labels.is_some() != other.labels.is_some()
        {
            return Err(Error::invalid_input(OP, "incompatible label spaces"));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .map_err(|e| Error::invalid_input(OP, e.to_string()))?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let noise = match (&self.noise, &other.noise) {
            (None, None) => None,
            (a, b) => {
                let a = a.clone().unwrap_or_else(|| vec![0.0; self.len()]);
                let b = b.clone().unwrap_or_else(|| vec![0.0; other.len()]);
                Some(a.into_iter().chain(b).collect())
            }
        };
        Ok(Dataset {
            features,
            labels,
            class_count: self.class_count,
            provenance: self.provenance.clone(),
            noise,
        })
    }

    pub fn class_histogram(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|labels| histogram(labels, self.class_count))
    }

    /// Indices of each class, in row order.
    pub(crate) fn class_members(&self, op: &'static str) -> Result<Vec<Vec<usize>>> {
        let labels = self.require_labels(op)?;
        let mut members = vec![Vec::new(); self.class_count];
        for (i, &y) in labels.iter().enumerate() {
            members[y].push(i);
        }
        Ok(members)
    }

    pub(crate) fn set_features(&mut self, features: Array2<f64>, noise: Vec<f64>) {
        debug_assert_eq!(features.dim(), self.features.dim());
        self.features = features;
        self.noise = Some(noise);
    }
}

/// Unlabeled pool. Labels are kept only to simulate the labeling oracle at
/// evaluation time; selection code sees features alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    data: Dataset,
}

impl Pool {
    pub fn hide(data: Dataset) -> Self {
        Pool { data }
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.data.features()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn class_count(&self) -> usize {
        self.data.class_count()
    }

    pub fn noise_record(&self) -> Option<&[f64]> {
        self.data.noise_record()
    }

    /// Always fails: selection must never read pool labels.
    pub fn labels(&self) -> Result<&[usize]> {
        Err(Error::HiddenLabels { op: "data::pool_labels" })
    }

    /// Query the labeling oracle for `indices`. Reserved for the evaluation
    /// harness, which plays the annotator.
    pub fn reveal(&self, indices: &[usize]) -> Result<Dataset> {
        self.data.subset(indices)
    }

    /// Rewrite the underlying data (corruption, planting) without exposing
    /// labels to selection-facing callers.
    pub fn transform(self, f: impl FnOnce(Dataset) -> Result<Dataset>) -> Result<Pool> {
        Ok(Pool { data: f(self.data)? })
    }
}

pub fn histogram(labels: &[usize], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0; class_count];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Scale each column to [0, 1]; constant columns map to 0.
pub fn minmax_scale(features: &mut Array2<f64>) {
    for mut col in features.columns_mut() {
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        if span > 0.0 {
            col.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
        } else {
            col.fill(0.0);
        }
    }
}

/// Largest-remainder apportionment of `total` items by `weights`. Remainder
/// ties go to the lowest index. Weights need not be normalized.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
