//! Set-utility model `f(S) = ρ(Σ_{x∈S} φ(x))`.
//!
//! `φ` embeds each element, the embeddings are sum-pooled, and `ρ` maps the
//! pooled vector to a scalar utility. Sum pooling makes the model invariant to
//! element order and lets it see set size.

use std::cell::Cell;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::SubsetSample;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, DenseNet, Loss, OptimizerConfig, OptimizerState, Targets};
use crate::seed;

/// Architecture of the two subnetworks. Hidden lists exclude input and output
/// widths, so two hidden entries give three fully connected layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepSetsConfig {
    pub phi_hidden: Vec<usize>,
    pub rho_hidden: Vec<usize>,
    pub set_features: usize,
}

impl Default for DeepSetsConfig {
    fn default() -> Self {
        DeepSetsConfig {
            phi_hidden: vec![128, 128],
            rho_hidden: vec![128, 128],
            set_features: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement on the early-stopping split before giving
    /// up; 0 disables early stopping.
    pub patience: usize,
    /// Share of the corpus held back for early stopping.
    pub early_stop_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1e-5,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            early_stop_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilityModel {
    phi: DenseNet,
    rho: DenseNet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input_dim: usize,
    pub set_features: usize,
    pub config_hash: String,
}

impl UtilityModel {
    pub fn new(phi: DenseNet, rho: DenseNet) -> Result<Self> {
        const OP: &str = "deepsets::new";
        if phi.output_dim() != rho.input_dim() {
            return Err(Error::DimensionMismatch {
                op: OP,
                expected: phi.output_dim(),
                got: rho.input_dim(),
            });
        }
        if rho.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                op: OP,
                expected: 1,
                got: rho.output_dim(),
            });
        }
        Ok(UtilityModel { phi, rho })
    }

    pub fn random(input_dim: usize, config: &DeepSetsConfig, rng: &mut seed::Rng) -> Result<Self> {
        if config.set_features == 0 || config.phi_hidden.contains(&0) || config.rho_hidden.contains(&0) {
            return Err(Error::invalid_spec("deepsets::random", "layer widths must be positive"));
        }
        let mut phi_sizes = vec![input_dim];
        phi_sizes.extend(&config.phi_hidden);
        phi_sizes.push(config.set_features);
        let mut rho_sizes = vec![config.set_features];
        rho_sizes.extend(&config.rho_hidden);
        rho_sizes.push(1);
        let phi = DenseNet::random(&phi_sizes, Activation::Relu, rng)?;
        let rho = DenseNet::random(&rho_sizes, Activation::Relu, rng)?;
        UtilityModel::new(phi, rho)
    }

    pub fn phi(&self) -> &DenseNet {
        &self.phi
    }

    pub fn rho(&self) -> &DenseNet {
        &self.rho
    }

    pub fn phi_mut(&mut self) -> &mut DenseNet {
        &mut self.phi
    }

    pub fn rho_mut(&mut self) -> &mut DenseNet {
        &mut self.rho
    }

    pub fn input_dim(&self) -> usize {
        self.phi.input_dim()
    }

    pub fn set_feature_dim(&self) -> usize {
        self.phi.output_dim()
    }

    /// φ applied to every row.
    pub fn embed(&self, elements: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.phi.forward(elements)
    }

    /// ρ of an already pooled vector.
    pub fn predict_pooled(&self, pooled: ArrayView1<f64>) -> Result<f64> {
        let out = self.rho.forward(pooled.insert_axis(Axis(0)))?;
        Ok(out[[0, 0]])
    }

    /// Utility of the set whose elements are the rows of `set`. The empty set
    /// evaluates to ρ(0).
    pub fn predict(&self, set: ArrayView2<f64>) -> Result<f64> {
        if set.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "deepsets::predict",
                expected: self.input_dim(),
                got: set.ncols(),
            });
        }
        let pooled = if set.nrows() == 0 {
            Array1::zeros(self.set_feature_dim())
        } else {
            self.embed(set)?.sum_axis(Axis(0))
        };
        self.predict_pooled(pooled.view())
    }

    /// Predictions for many subsets of one feature table, embedding each row
    /// once.
    pub fn predict_subsets(&self, features: ArrayView2<f64>, subsets: &[&[usize]]) -> Result<Vec<f64>> {
        let embeddings = self.embed(features)?;
        let mut pooled = Array2::zeros((subsets.len(), self.set_feature_dim()));
        for (row, subset) in pooled.outer_iter_mut().zip(subsets) {
            pool_rows(&embeddings, subset, row);
        }
        Ok(self.rho.forward(pooled.view())?.column(0).to_vec())
    }

    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        const OP: &str = "deepsets::save";
        std::fs::create_dir_all(dir).map_err(|e| Error::io(OP, dir, e))?;
        nn::save_net(&self.phi, &dir.join("phi.bin"))?;
        nn::save_net(&self.rho, &dir.join("rho.bin"))?;
        let manifest = ModelManifest {
            format_version: nn::WEIGHT_FORMAT_VERSION,
            input_dim: self.input_dim(),
            set_features: self.set_feature_dim(),
            config_hash: config_hash.to_string(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(OP, &path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, ModelManifest)> {
        const OP: &str = "deepsets::load";
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(OP, &path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            op: OP,
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let model = UtilityModel::new(nn::load_net(&dir.join("phi.bin"))?, nn::load_net(&dir.join("rho.bin"))?)?;
        if model.input_dim() != manifest.input_dim || model.set_feature_dim() != manifest.set_features {
            return Err(Error::invalid_input(OP, "weight files disagree with manifest dimensions"));
        }
        Ok((model, manifest))
    }
}

fn pool_rows(embeddings: &Array2<f64>, rows: &[usize], mut out: ndarray::ArrayViewMut1<f64>) {
    out.fill(0.0);
    for &r in rows {
        out += &embeddings.row(r);
    }
}

const REFRESH_EVERY: usize = 1024;

/// Running pooled embedding of a growing set drawn from a frozen candidate
/// pool. Each candidate evaluation costs one ρ pass.
pub struct SetSumCache<'m> {
    model: &'m UtilityModel,
    embeddings: Array2<f64>,
    pooled: Array1<f64>,
    members: Vec<usize>,
    is_member: Vec<bool>,
    since_refresh: usize,
    current: f64,
    rho_calls: Cell<u64>,
}

impl<'m> SetSumCache<'m> {
    pub fn new(model: &'m UtilityModel, pool: ArrayView2<f64>) -> Result<Self> {
        let embeddings = model.embed(pool)?;
        let pooled = Array1::zeros(model.set_feature_dim());
        let current = model.predict_pooled(pooled.view())?;
        Ok(SetSumCache {
            model,
            is_member: vec![false; embeddings.nrows()],
            embeddings,
            pooled,
            members: Vec::new(),
            since_refresh: 0,
            current,
            rho_calls: Cell::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn pooled(&self) -> ArrayView1<'_, f64> {
        self.pooled.view()
    }

    /// Model value of the current member set.
    pub fn current_value(&self) -> f64 {
        self.current
    }

    /// Number of ρ passes spent on candidate evaluations.
    pub fn rho_calls(&self) -> u64 {
        self.rho_calls.get()
    }

    fn check_candidate(&self, op: &'static str, candidate: usize) -> Result<()> {
        if candidate >= self.len() {
            return Err(Error::invalid_input(op, format!("candidate {candidate} outside pool of {}", self.len())));
        }
        if self.is_member[candidate] {
            return Err(Error::StaleCache {
                op,
                msg: format!("candidate {candidate} is already a member"),
            });
        }
        Ok(())
    }

    /// Fail if the caller's view of the set size disagrees with the cache.
    pub fn verify(&self, expected_members: usize) -> Result<()> {
        if self.members.len() != expected_members {
            return Err(Error::StaleCache {
                op: "deepsets::verify",
                msg: format!("cache holds {} members, caller expects {expected_members}", self.members.len()),
            });
        }
        Ok(())
    }

    /// `f(S ∪ {candidate})` computed as ρ(pooled + φ(candidate)). The cache is
    /// not modified.
    pub fn value_with(&self, candidate: usize) -> Result<f64> {
        self.check_candidate("deepsets::value_with", candidate)?;
        let probe = &self.pooled + &self.embeddings.row(candidate);
        self.rho_calls.set(self.rho_calls.get() + 1);
        self.model.predict_pooled(probe.view())
    }

    /// `f(S ∪ {candidate}) − f(S)`.
    pub fn marginal_gain(&self, candidate: usize) -> Result<f64> {
        Ok(self.value_with(candidate)? - self.current)
    }

    /// Add `candidate` to the set; returns the new set value.
    pub fn commit(&mut self, candidate: usize) -> Result<f64> {
        self.check_candidate("deepsets::commit", candidate)?;
        self.pooled += &self.embeddings.row(candidate);
        self.members.push(candidate);
        self.is_member[candidate] = true;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_EVERY {
            self.refresh();
        }
        self.current = self.model.predict_pooled(self.pooled.view())?;
        Ok(self.current)
    }

    /// Recompute the pooled vector from scratch, in member order.
    pub fn refresh(&mut self) {
        let mut pooled = Array1::zeros(self.pooled.len());
        pool_rows(&self.embeddings, &self.members, pooled.view_mut());
        self.pooled = pooled;
        self.since_refresh = 0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// MSE on the early-stopping split at the restored epoch.
    pub early_stop_mse: Option<f64>,
}

/// Mean squared error of `model` over `samples`.
pub fn corpus_mse(model: &UtilityModel, features: ArrayView2<f64>, samples: &[SubsetSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid_input("deepsets::mse", "no samples"));
    }
    let subsets: Vec<&[usize]> = samples.iter().map(|s| s.indices.as_slice()).collect();
    let preds = model.predict_subsets(features, &subsets)?;
    Ok(preds
        .iter()
        .zip(samples)
        .map(|(p, s)| (p - s.utility).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
}

/// Loss and gradients of both subnetworks on one minibatch of subsets. The
/// loss is the mean over subsets of the squared error.
pub fn batch_gradients(
    model: &UtilityModel,
    features: ArrayView2<f64>,
    batch: &[&SubsetSample],
) -> Result<(f64, nn::Gradients, nn::Gradients)> {
    let rows: Vec<usize> = batch.iter().flat_map(|s| s.indices.iter().copied()).collect();
    let elements = features.select(Axis(0), &rows);
    let phi_trace = model.phi.forward_trace(elements.view())?;
    let embeddings = phi_trace.output();

    let mut pooled = Array2::zeros((batch.len(), model.set_feature_dim()));
    let mut start = 0;
    for (b, sample) in batch.iter().enumerate() {
        let end = start + sample.indices.len();
        pooled
            .row_mut(b)
            .assign(&embeddings.slice(s![start..end, ..]).sum_axis(Axis(0)));
        start = end;
    }
    let rho_trace = model.rho.forward_trace(pooled.view())?;
    let targets = Array2::from_shape_fn((batch.len(), 1), |(b, _)| batch[b].utility);
    let (loss, grad_out) = nn::loss_and_grad(rho_trace.output(), Targets::Values(targets.view()), Loss::MeanSquaredError)?;
    let (rho_grads, grad_pooled) = model.rho.backward_trace(&rho_trace, grad_out)?;

    let mut grad_embeddings = Array2::zeros(embeddings.raw_dim());
    let mut start = 0;
    for (b, sample) in batch.iter().enumerate() {
        let end = start + sample.indices.len();
        for mut row in grad_embeddings.slice_mut(s![start..end, ..]).outer_iter_mut() {
            row.assign(&grad_pooled.row(b));
        }
        start = end;
    }
    let (phi_grads, _) = model.phi.backward_trace(&phi_trace, grad_embeddings)?;
    Ok((loss, phi_grads, rho_grads))
}

/// Regress the model on `(subset, utility)` pairs by minibatch Adam on mean
/// squared error. With `patience > 0`, a slice of the corpus is held back and
/// the parameters with the lowest held-back error are returned.
pub fn fit(
    corpus: &[SubsetSample],
    train_features: ArrayView2<f64>,
    config: &DeepSetsConfig,
    fit_config: &FitConfig,
    seed: u64,
) -> Result<(UtilityModel, FitReport)> {
    const OP: &str = "deepsets::fit";
    if corpus.is_empty() {
        return Err(Error::invalid_input(OP, "empty corpus"));
    }
    if fit_config.batch_size == 0 || fit_config.max_epochs == 0 {
        return Err(Error::invalid_spec(OP, "batch size and epochs must be at least 1"));
    }
    let n_rows = train_features.nrows();
    for s in corpus {
        if let Some(&bad) = s.indices.iter().find(|&&i| i >= n_rows) {
            return Err(Error::invalid_input(OP, format!("sample t={} index {bad} outside {n_rows} rows", s.t)));
        }
    }
    let optimizer = OptimizerConfig::adam(fit_config.learning_rate);
    optimizer.validate()?;

    let mut rng = seed::rng(seed);
    let mut model = UtilityModel::random(train_features.ncols(), config, &mut rng)?;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let stop_count = if fit_config.patience > 0 && corpus.len() >= 10 {
        ((corpus.len() as f64 * fit_config.early_stop_fraction).round() as usize).clamp(1, corpus.len() - 1)
    } else {
        0
    };
    let stop_set: Vec<SubsetSample> = order[..stop_count].iter().map(|&i| corpus[i].clone()).collect();
    let mut train_order: Vec<usize> = order[stop_count..].to_vec();

    let mut phi_state = OptimizerState::new(optimizer, &model.phi);
    let mut rho_state = OptimizerState::new(optimizer, &model.rho);
    let mut best: Option<(f64, usize, UtilityModel)> = None;
    let mut epoch_losses = Vec::new();
    for epoch in 0..fit_config.max_epochs {
        train_order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_order.chunks(fit_config.batch_size) {
            let batch: Vec<&SubsetSample> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, phi_grads, rho_grads) = batch_gradients(&model, train_features, &batch)?;
            phi_state.step(&mut model.phi, &phi_grads)?;
            rho_state.step(&mut model.rho, &rho_grads)?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / train_order.len() as f64);

        if stop_count > 0 {
            let mse = corpus_mse(&model, train_features, &stop_set)?;
            match &best {
                Some((b, _, _)) if mse >= *b => {}
                _ => best = Some((mse, epoch, model.clone())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= fit_config.patience {
                break;
            }
        }
    }
    let epochs_run = epoch_losses.len();
    let (model, best_epoch, early_stop_mse) = match best {
        Some((mse, epoch, m)) => (m, epoch, Some(mse)),
        None => (model, epochs_run - 1, None),
    };
    Ok((
        model,
        FitReport {
            epochs_run,
            best_epoch,
            epoch_losses,
            early_stop_mse,
        },
    ))
}
