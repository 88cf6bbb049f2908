#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use oneround::corpus::SubsetSample;
use oneround::deepsets::{batch_gradients, corpus_mse, DeepSetsConfig, UtilityModel};
use oneround::greedy::SetObjective;
use oneround::nn::{Activation, DenseNet, Gradients, Loss, Targets};
use oneround::seed::{self, Rng};
use oneround::Result;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;

/// Instances with a ReLU pre-activation closer than this to zero are redrawn:
/// central differences straddling a kink measure nothing useful.
pub const KINK_MARGIN: f64 = 1e-3;

/// Smallest |pre-activation| over all ReLU units for `batch`.
pub fn kink_distance(net: &DenseNet, batch: ArrayView2<f64>) -> f64 {
    let mut input = batch.to_owned();
    let mut closest = f64::INFINITY;
    for layer in net.layers() {
        let z = input.dot(&layer.weights.t()) + &layer.bias;
        if layer.activation == Activation::Relu {
            closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        }
        input = z.mapv(|v| if layer.activation == Activation::Relu { v.max(0.0) } else { v });
    }
    closest
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn flatten(grads: &Gradients) -> Vec<f64> {
    grads
        .layers
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Central differences of `loss` over every parameter of the net picked by
/// `select`, visiting weights then bias layer by layer.
pub fn numeric_gradient<M: Clone>(
    model: &M,
    select: impl Fn(&mut M) -> &mut DenseNet,
    loss: impl Fn(&M) -> f64,
) -> Vec<f64> {
    let mut work = model.clone();
    let layer_count = select(&mut work).layers().len();
    let mut out = Vec::new();
    for l in 0..layer_count {
        let weight_count = select(&mut work).layers()[l].weights.len();
        let bias_count = select(&mut work).layers()[l].bias.len();
        for k in 0..weight_count + bias_count {
            let nudge = |m: &mut M, delta: f64| {
                let layer = &mut select(m).layers_mut()[l];
                if k < weight_count {
                    let cols = layer.weights.ncols();
                    layer.weights[[k / cols, k % cols]] += delta;
                } else {
                    layer.bias[k - weight_count] += delta;
                }
            };
            nudge(&mut work, FD_STEP);
            let up = loss(&work);
            nudge(&mut work, -2.0 * FD_STEP);
            let down = loss(&work);
            nudge(&mut work, FD_STEP);
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Analytic vs numeric gradient error of a classifier net on one random batch.
pub fn classifier_gradient_error(sizes: &[usize], seed: u64) -> f64 {
    let mut rng = seed::rng(seed);
    let classes = *sizes.last().unwrap();
    let (net, batch) = loop {
        let mut net = DenseNet::random(sizes, Activation::Relu, &mut rng).unwrap();
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = random_matrix(7, sizes[0], &mut rng);
        if kink_distance(&net, batch.view()) > KINK_MARGIN {
            break (net, batch);
        }
    };
    let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..classes)).collect();
    let (_, grads) = net.backward(batch.view(), Targets::Classes(&labels), Loss::SoftmaxCrossEntropy).unwrap();
    let loss = |n: &DenseNet| {
        let out = n.forward(batch.view()).unwrap();
        oneround::nn::loss_and_grad(&out, Targets::Classes(&labels), Loss::SoftmaxCrossEntropy).unwrap().0
    };
    let numeric = numeric_gradient(&net, |n| n, loss);
    relative_error(&flatten(&grads), &numeric)
}

/// Analytic vs numeric gradient error of the composed set model, for φ and ρ.
pub fn deepsets_gradient_error(seed: u64) -> (f64, f64) {
    let mut rng = seed::rng(seed);
    let (model, features, samples) = loop {
        let dim = rng.random_range(2..6);
        let config = DeepSetsConfig {
            phi_hidden: vec![rng.random_range(3..8)],
            rho_hidden: vec![rng.random_range(3..8)],
            set_features: rng.random_range(2..6),
        };
        let mut model = UtilityModel::random(dim, &config, &mut rng).unwrap();
        for layer in model.phi_mut().layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        for layer in model.rho_mut().layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let features = random_matrix(12, dim, &mut rng);
        let samples: Vec<SubsetSample> = (0..4)
            .map(|t| {
                let size = rng.random_range(1..=5);
                let mut indices = rand::seq::index::sample(&mut rng, 12, size).into_vec();
                indices.sort_unstable();
                SubsetSample {
                    t,
                    seed: 0,
                    indices,
                    utility: rng.random_range(0.0..1.0),
                    class_histogram: vec![],
                }
            })
            .collect();
        let embeddings = model.embed(features.view()).unwrap();
        let pooled = Array2::from_shape_fn((samples.len(), model.set_feature_dim()), |(b, j)| {
            samples[b].indices.iter().map(|&i| embeddings[[i, j]]).sum()
        });
        let clear = kink_distance(model.phi(), features.view()) > KINK_MARGIN
            && kink_distance(model.rho(), pooled.view()) > KINK_MARGIN;
        if clear {
            break (model, features, samples);
        }
    };
    let batch: Vec<&SubsetSample> = samples.iter().collect();
    let (_, phi_grads, rho_grads) = batch_gradients(&model, features.view(), &batch).unwrap();
    let loss = |m: &UtilityModel| corpus_mse(m, features.view(), &samples).unwrap();
    let phi_numeric = numeric_gradient(&model, |m| m.phi_mut(), loss);
    let rho_numeric = numeric_gradient(&model, |m| m.rho_mut(), loss);
    (
        relative_error(&flatten(&phi_grads), &phi_numeric),
        relative_error(&flatten(&rho_grads), &rho_numeric),
    )
}

/// Weighted coverage: element `e` covers `covers[e]`; value is the total
/// weight of covered items.
#[derive(Clone, Debug)]
pub struct Coverage {
    pub weights: Vec<f64>,
    pub covers: Vec<Vec<usize>>,
    covered: Vec<bool>,
    value: f64,
}

impl Coverage {
    pub fn random(elements: usize, items: usize, rng: &mut Rng) -> Coverage {
        let weights = (0..items).map(|_| rng.random_range(0.1..1.0)).collect();
        let covers = (0..elements)
            .map(|_| {
                let k = rng.random_range(1..=items / 3);
                rand::seq::index::sample(rng, items, k).into_vec()
            })
            .collect();
        Coverage::new(weights, covers)
    }

    pub fn new(weights: Vec<f64>, covers: Vec<Vec<usize>>) -> Coverage {
        let items = weights.len();
        Coverage {
            weights,
            covers,
            covered: vec![false; items],
            value: 0.0,
        }
    }

    pub fn value_of(&self, set: &[usize]) -> f64 {
        let mut hit = vec![false; self.weights.len()];
        for &e in set {
            for &i in &self.covers[e] {
                hit[i] = true;
            }
        }
        hit.iter().zip(&self.weights).filter(|(h, _)| **h).map(|(_, w)| w).sum()
    }

    pub fn elements(&self) -> usize {
        self.covers.len()
    }
}

impl SetObjective for Coverage {
    fn value_with(&self, element: usize) -> Result<f64> {
        let extra: f64 = self.covers[element]
            .iter()
            .filter(|&&i| !self.covered[i])
            .map(|&i| self.weights[i])
            .sum();
        Ok(self.value + extra)
    }

    fn commit(&mut self, element: usize) -> Result<f64> {
        self.value = self.value_with(element)?;
        for &i in &self.covers[element] {
            self.covered[i] = true;
        }
        Ok(self.value)
    }

    fn current_value(&self) -> f64 {
        self.value
    }
}

/// Textbook greedy over `0..n`: recompute `f(S ∪ {e})` from scratch for every
/// remaining `e`, keep the first maximum.
pub fn exact_greedy(n: usize, budget: usize, f: impl Fn(&[usize]) -> f64) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for e in 0..n {
            if chosen.contains(&e) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(e);
            let v = f(&trial);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((e, v));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Best value over all `k`-subsets of `0..n`.
pub fn exhaustive_optimum(n: usize, k: usize, f: impl Fn(&[usize]) -> f64) -> f64 {
    fn walk(start: usize, n: usize, k: usize, set: &mut Vec<usize>, f: &dyn Fn(&[usize]) -> f64, best: &mut f64) {
        if set.len() == k {
            *best = best.max(f(set));
            return;
        }
        for e in start..n {
            if n - e < k - set.len() {
                break;
            }
            set.push(e);
            walk(e + 1, n, k, set, f, best);
            set.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    walk(0, n, k, &mut Vec::new(), &f, &mut best);
    best
}

/// Model value of `set` computed directly, without the incremental cache.
pub fn direct_value(model: &UtilityModel, pool: ArrayView2<f64>, set: &[usize]) -> f64 {
    let rows = pool.select(ndarray::Axis(0), set);
    model.predict(rows.view()).unwrap()
}
