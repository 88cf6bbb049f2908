//! Three demo operations behind a JSON-in, JSON-out interface so the static
//! page in `www/` can drive them through wasm-bindgen.

use oneround::data::{inject_noise, make_blobs, split, NoiseLevel, SplitSpec};
use oneround::deepsets::{DeepSetsConfig, FitConfig};
use oneround::diagnostics::{marginal_curve, CurveSpec, ProxyUtility};
use oneround::greedy::{select, select_random, stochastic_greedy, SampleSize, SelectionSpec, SetObjective, Strategy};
use oneround::proxy::{Architecture, MetricSpec, ProxySpec};
use oneround::utility::{learn_utility, SamplerSpec, SizePolicy};
use oneround::{seed, Error, Result};
use rand::Rng as _;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub seed: u64,
    pub classes: usize,
    pub separation: f64,
    pub noise_fraction: f64,
    pub noise_sigma: f64,
    pub budget: usize,
    pub subsets: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            seed: 1,
            classes: 3,
            separation: 3.0,
            noise_fraction: 0.4,
            noise_sigma: 0.25,
            budget: 30,
            subsets: 150,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionView {
    /// 2-D pool coordinates after corruption.
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub noisy: Vec<bool>,
    /// Pool indices in greedy pick order.
    pub learned: Vec<usize>,
    pub random: Vec<usize>,
    pub heldout_spearman: Option<f64>,
}

/// Learn a utility model on noisy 2-D blobs and pick from the pool with it.
pub fn selection_demo(p: &SelectionParams) -> Result<SelectionView> {
    let data = make_blobs(600, 2, p.classes, p.separation, seed::derive(p.seed, &[0]))?;
    let splits = split(&data, &SplitSpec { train: 40, val: 120, pool: 300, seed: seed::derive(p.seed, &[1]) })?;
    let levels = [NoiseLevel { fraction: p.noise_fraction, sigma: p.noise_sigma }];
    let noise_seed = seed::derive(p.seed, &[2]);
    let pool = splits.pool.transform(|d| inject_noise(&d, &levels, noise_seed))?;

    let sampler = SamplerSpec {
        size: SizePolicy::Uniform { min: 5, max: 40 },
        ..SamplerSpec::new(p.subsets, seed::derive(p.seed, &[3]))
    };
    let proxy = ProxySpec {
        architecture: Architecture::LogisticRegression,
        learning_rate: 0.1,
        ..ProxySpec::default()
    };
    let net = DeepSetsConfig { phi_hidden: vec![16], rho_hidden: vec![16], set_features: 16 };
    let fit = FitConfig { learning_rate: 3e-3, max_epochs: 150, patience: 15, ..FitConfig::default() };
    let learned = learn_utility(
        &splits.train,
        &splits.val,
        &sampler,
        &proxy,
        MetricSpec::Top1Accuracy,
        &net,
        &fit,
        seed::derive(p.seed, &[4]),
        1,
    )?;

    let spec = SelectionSpec {
        budget: p.budget,
        block_size: pool.len(),
        epsilon: 0.01,
        seed: seed::derive(p.seed, &[5]),
        strategy: Strategy::Dulo,
    };
    let picked = select(&learned.model, pool.features(), &spec, None, 1, false)?;
    let random = select_random(pool.len(), p.budget, seed::derive(p.seed, &[6]))?;

    let source_labels = data.require_labels("web::selection_demo")?;
    let features = pool.features();
    Ok(SelectionView {
        points: features.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        labels: splits.indices[2].iter().map(|&i| source_labels[i]).collect(),
        noisy: pool.noise_record().map_or(vec![false; pool.len()], |n| n.iter().map(|&s| s > 0.0).collect()),
        learned: picked.picks.iter().map(|k| k.pool_index).collect(),
        random: random.picks.iter().map(|k| k.pool_index).collect(),
        heldout_spearman: learned.report.heldout_spearman,
    })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct GreedyParams {
    pub seed: u64,
    pub elements: usize,
    pub items: usize,
    pub budget: usize,
    pub epsilon: f64,
    pub runs: usize,
}

impl Default for GreedyParams {
    fn default() -> Self {
        GreedyParams { seed: 1, elements: 16, items: 40, budget: 4, epsilon: 0.1, runs: 50 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GreedyView {
    pub optimum: f64,
    pub full_greedy: f64,
    /// One value per stochastic run.
    pub stochastic: Vec<f64>,
    pub sample_size: usize,
}

/// Weighted coverage: element `e` covers the items in `covers[e]`.
#[derive(Clone, Debug)]
struct Coverage {
    weights: Vec<f64>,
    covers: Vec<Vec<usize>>,
    covered: Vec<bool>,
    value: f64,
}

impl Coverage {
    fn value_of(&self, set: &[usize]) -> f64 {
        let mut hit = vec![false; self.weights.len()];
        set.iter().flat_map(|&e| &self.covers[e]).for_each(|&i| hit[i] = true);
        hit.iter().zip(&self.weights).filter(|(h, _)| **h).map(|(_, w)| w).sum()
    }
}

impl SetObjective for Coverage {
    fn value_with(&self, element: usize) -> Result<f64> {
        let extra: f64 = self.covers[element].iter().filter(|&&i| !self.covered[i]).map(|&i| self.weights[i]).sum();
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

fn best_subset(n: usize, k: usize, f: &dyn Fn(&[usize]) -> f64) -> f64 {
    fn walk(start: usize, n: usize, k: usize, set: &mut Vec<usize>, f: &dyn Fn(&[usize]) -> f64, best: &mut f64) {
        if set.len() == k {
            *best = best.max(f(set));
            return;
        }
        for e in start..=n - (k - set.len()) {
            set.push(e);
            walk(e + 1, n, k, set, f, best);
            set.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    walk(0, n, k, &mut Vec::new(), f, &mut best);
    best
}

/// Stochastic and full greedy against the exhaustive optimum on a random
/// weighted-coverage instance.
pub fn greedy_demo(p: &GreedyParams) -> Result<GreedyView> {
    const OP: &str = "web::greedy_demo";
    if p.elements == 0 || p.elements > 24 || p.items < 3 || p.budget == 0 || p.budget > p.elements {
        return Err(Error::invalid_spec(OP, "need 1 <= budget <= elements <= 24 and items >= 3"));
    }
    let mut rng = seed::rng(p.seed);
    let weights = (0..p.items).map(|_| rng.random_range(0.1..1.0)).collect();
    let covers = (0..p.elements)
        .map(|_| {
            let k = rng.random_range(1..=p.items / 3);
            rand::seq::index::sample(&mut rng, p.items, k).into_vec()
        })
        .collect();
    let fresh = Coverage { weights, covers, covered: vec![false; p.items], value: 0.0 };
    let all: Vec<usize> = (0..p.elements).collect();

    let run = |size: SampleSize, run_seed: u64| -> Result<f64> {
        let mut objective = fresh.clone();
        let picks = stochastic_greedy(&mut objective, &all, p.budget, p.epsilon, size, false, &mut seed::rng(run_seed))?;
        Ok(picks.last().map_or(0.0, |k| k.value))
    };
    Ok(GreedyView {
        optimum: best_subset(p.elements, p.budget, &|s| fresh.value_of(s)),
        full_greedy: run(SampleSize::Full, 0)?,
        stochastic: (0..p.runs).map(|r| run(SampleSize::Formula, seed::derive(p.seed, &[r as u64]))).collect::<Result<_>>()?,
        sample_size: oneround::greedy::formula_sample_size(p.elements, p.budget, p.epsilon),
    })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct CurveParams {
    pub seed: u64,
    pub train: usize,
    pub probes: usize,
    pub sizes: usize,
    pub separation: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams { seed: 1, train: 120, probes: 6, sizes: 8, separation: 1.5 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveView {
    pub sizes: Vec<usize>,
    pub mean: Vec<f64>,
    pub contributions: Vec<Vec<f64>>,
    pub trend: Option<f64>,
}

/// Mean marginal contribution of a point against the size of the set it
/// joins, measured with a retrained logistic proxy.
pub fn curve_demo(p: &CurveParams) -> Result<CurveView> {
    let data = make_blobs(p.train + 400, 8, 4, p.separation, seed::derive(p.seed, &[0]))?;
    let splits = split(&data, &SplitSpec { train: p.train, val: 300, pool: 100, seed: seed::derive(p.seed, &[1]) })?;
    let proxy = ProxySpec { learning_rate: 0.1, ..ProxySpec::default() };
    let utility = ProxyUtility { train: &splits.train, val: &splits.val, spec: &proxy, metric: MetricSpec::Top1Accuracy };
    let spec = CurveSpec::geometric(p.train, p.sizes, p.probes);
    let curve = marginal_curve(p.train, &utility, &spec, seed::derive(p.seed, &[2]), 1)?;
    Ok(CurveView {
        trend: curve.trend(),
        sizes: curve.sizes,
        mean: curve.mean,
        contributions: curve.contributions,
    })
}

fn call<P: DeserializeOwned, V: Serialize>(params: &str, op: impl Fn(&P) -> Result<V>) -> std::result::Result<String, JsError> {
    let parsed: P = serde_json::from_str(if params.trim().is_empty() { "{}" } else { params })?;
    let view = op(&parsed).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(serde_json::to_string(&view)?)
}

#[wasm_bindgen(js_name = selectionDemo)]
pub fn selection_demo_js(params: &str) -> std::result::Result<String, JsError> {
    call(params, selection_demo)
}

#[wasm_bindgen(js_name = greedyDemo)]
pub fn greedy_demo_js(params: &str) -> std::result::Result<String, JsError> {
    call(params, greedy_demo)
}

#[wasm_bindgen(js_name = curveDemo)]
pub fn curve_demo_js(params: &str) -> std::result::Result<String, JsError> {
    call(params, curve_demo)
}
