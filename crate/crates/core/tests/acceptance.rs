//! Acceptance gate. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any criterion fails.
//!
//! `cargo test -p oneround-core --test acceptance -- 7 8` runs a subset.
//! Criterion 10 runs only when `MNIST_DIR` holds the uncompressed IDX files.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{
    classifier_gradient_error, deepsets_gradient_error, direct_value, exact_greedy, exhaustive_optimum, random_matrix,
    Coverage,
};
use ndarray::Axis;
use oneround::config::ExperimentConfig;
use oneround::corpus::SubsetSample;
use oneround::data::{inject_noise, make_blobs, split, NoiseLevel, SplitSpec};
use oneround::deepsets::{fit, DeepSetsConfig, FitConfig, SetSumCache, UtilityModel};
use oneround::diagnostics::{marginal_curve, transfer_report, CurveSpec, ProxyUtility, TransferSpec};
use oneround::greedy::{stochastic_greedy, SampleSize, SetObjective};
use oneround::harness::Harness;
use oneround::proxy::{Architecture, MetricSpec, ProxySpec};
use oneround::seed;
use oneround::stats;
use oneround::utility::{build_corpus, SamplerSpec};
use rand::seq::SliceRandom;
use rand::Rng as _;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Option<Outcome>,
}

const WORKERS: usize = 8;

fn check(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Option<Outcome> {
    let mut worst = [0.0f64; 3];
    let mut failures = 0;
    for s in 0..50u64 {
        let mut rng = seed::rng(seed::derive(1, &[s]));
        let dim = rng.random_range(1..10);
        let classes = rng.random_range(2..6);
        let hidden = rng.random_range(1..64);
        let errs = [
            classifier_gradient_error(&[dim, classes], s),
            classifier_gradient_error(&[dim, hidden, classes], s),
            {
                let (phi, rho) = deepsets_gradient_error(s);
                phi.max(rho)
            },
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        failures += errs.iter().filter(|&&e| e.is_nan() || e >= 1e-4).count();
    }
    Some(check(
        failures == 0,
        format!(
            "max relative error logistic {:.1e}, mlp {:.1e}, set model {:.1e}; {failures} instance failures",
            worst[0], worst[1], worst[2]
        ),
    ))
}

fn permutation_invariance() -> Option<Outcome> {
    let config = DeepSetsConfig {
        phi_hidden: vec![64, 64],
        rho_hidden: vec![64, 64],
        set_features: 64,
    };
    let mut rng = seed::rng(2);
    let model = UtilityModel::random(8, &config, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let size = rng.random_range(1..=300);
        let set = random_matrix(size, 8, &mut rng).mapv(|v| (v + 1.0) / 2.0);
        let reference = model.predict(set.view()).unwrap();
        let mut order: Vec<usize> = (0..size).collect();
        for _ in 0..100 {
            order.shuffle(&mut rng);
            let value = model.predict(set.select(Axis(0), &order).view()).unwrap();
            worst = worst.max((value - reference).abs());
        }
    }
    Some(check(worst <= 1e-9, format!("max |Δf| {worst:.2e} over 10000 permutations")))
}

fn greedy_guarantee() -> Option<Outcome> {
    let bound = 1.0 - (-1.0f64).exp() - 0.1;
    let mut worst_ratio = f64::INFINITY;
    for instance in 0..20u64 {
        let cover = Coverage::random(20, 40, &mut seed::rng(seed::derive(3, &[instance])));
        let opt = exhaustive_optimum(20, 5, |s| cover.value_of(s));
        let pool: Vec<usize> = (0..20).collect();
        let mean = (0..100u64)
            .map(|run| {
                let mut objective = cover.clone();
                let mut rng = seed::rng(seed::derive(3, &[instance, run]));
                stochastic_greedy(&mut objective, &pool, 5, 0.1, SampleSize::Formula, false, &mut rng).unwrap();
                objective.current_value()
            })
            .sum::<f64>()
            / 100.0;
        worst_ratio = worst_ratio.min(mean / opt);
    }
    Some(check(
        worst_ratio >= bound,
        format!("worst mean/OPT over 20 instances {worst_ratio:.4} (bound {bound:.4})"),
    ))
}

fn greedy_oracle() -> Option<Outcome> {
    let mut mismatches = 0;
    for instance in 0..50u64 {
        let mut rng = seed::rng(seed::derive(4, &[instance]));
        let n = rng.random_range(8..30);
        let budget = rng.random_range(1..=n.min(8));
        let pool: Vec<usize> = (0..n).collect();
        let got: Vec<usize>;
        let expected: Vec<usize>;
        if instance % 2 == 0 {
            let cover = Coverage::random(n, 30, &mut rng);
            expected = exact_greedy(n, budget, |s| cover.value_of(s));
            let mut objective = cover.clone();
            got = stochastic_greedy(&mut objective, &pool, budget, 0.1, SampleSize::Full, false, &mut rng)
                .unwrap()
                .iter()
                .map(|p| p.element)
                .collect();
        } else {
            let config = DeepSetsConfig {
                phi_hidden: vec![16],
                rho_hidden: vec![16],
                set_features: 8,
            };
            let model = UtilityModel::random(4, &config, &mut rng).unwrap();
            let features = random_matrix(n, 4, &mut rng);
            expected = exact_greedy(n, budget, |s| direct_value(&model, features.view(), s));
            let mut cache = SetSumCache::new(&model, features.view()).unwrap();
            got = stochastic_greedy(&mut cache, &pool, budget, 0.1, SampleSize::Full, false, &mut rng)
                .unwrap()
                .iter()
                .map(|p| p.element)
                .collect();
        }
        if got != expected {
            mismatches += 1;
        }
    }
    Some(check(mismatches == 0, format!("{mismatches}/50 instances differ from exact greedy")))
}

fn diminishing_returns() -> Option<Outcome> {
    let data = make_blobs(1200, 16, 8, 1.5, 0).unwrap();
    let parts = split(&data, &SplitSpec { train: 300, val: 600, pool: 100, seed: 0 }).unwrap();
    let proxy = ProxySpec {
        learning_rate: 0.1,
        epochs: 60,
        ..ProxySpec::default()
    };
    let utility = ProxyUtility {
        train: &parts.train,
        val: &parts.val,
        spec: &proxy,
        metric: MetricSpec::Top1Accuracy,
    };
    let curve = marginal_curve(300, &utility, &CurveSpec::geometric(300, 10, 10), 0, WORKERS).unwrap();
    let trend = curve.trend().unwrap();
    Some(check(
        trend <= -0.5,
        format!("Spearman(size, mean contribution) {trend:.3}; means {:?}", rounded(&curve.mean)),
    ))
}

fn transferability() -> Option<Outcome> {
    let data = make_blobs(1200, 16, 8, 1.5, 0).unwrap();
    let parts = split(&data, &SplitSpec { train: 300, val: 600, pool: 100, seed: 0 }).unwrap();
    let logistic = ProxySpec {
        learning_rate: 0.05,
        epochs: 30,
        ..ProxySpec::default()
    };
    let mlp = ProxySpec {
        architecture: Architecture::Mlp { hidden: vec![32] },
        ..logistic.clone()
    };
    let spec = TransferSpec {
        trials: 100,
        min_size: 2,
        max_size: 100,
        max_noisy_fraction: 1.0,
        sigma: 0.5,
    };
    let report = transfer_report(&parts.train, &parts.val, &logistic, &mlp, MetricSpec::Top1Accuracy, &spec, 0, WORKERS)
        .unwrap();
    Some(check(report.spearman >= 0.8, format!("Spearman {:.3} over 100 trials", report.spearman)))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn noisy_selection() -> Option<Outcome> {
    let out = tempfile::tempdir().unwrap();
    let overrides = vec![
        ("workers".to_string(), WORKERS.to_string()),
        ("output_dir".to_string(), format!("{:?}", out.path().display().to_string())),
    ];
    let config = ExperimentConfig::load(&workspace_root().join("configs/blobs-noisy.toml"), &overrides).unwrap();
    let summary = Harness::new(config).unwrap().run_all().unwrap();
    let mean = |s: &str| summary.evaluation.iter().find(|e| e.strategy == s).unwrap().mean;
    let (dulo, random) = (mean("dulo"), mean("random"));
    let ranks: Vec<_> = summary.diagnostics.ranks.iter().filter(|r| r.strategy == "dulo").collect();
    let clean_first = ranks.iter().filter(|r| r.clean_first).count();
    let spearman: Vec<f64> = summary.fits.iter().map(|f| f.heldout_spearman.unwrap_or(f64::NAN)).collect();
    Some(check(
        dulo >= random && clean_first >= 7,
        format!(
            "accuracy dulo {dulo:.4} vs random {random:.4}; clean before σ=1.0 in {clean_first}/{} seeds; utility-model held-out Spearman {:?}",
            ranks.len(),
            rounded(&spearman)
        ),
    ))
}

fn sample_complexity() -> Option<Outcome> {
    let config = DeepSetsConfig {
        phi_hidden: vec![32],
        rho_hidden: vec![32],
        set_features: 32,
    };
    let fit_config = FitConfig {
        learning_rate: 1e-3,
        max_epochs: 200,
        patience: 20,
        ..FitConfig::default()
    };
    let proxy = ProxySpec {
        learning_rate: 0.1,
        epochs: 60,
        ..ProxySpec::default()
    };
    let metric = MetricSpec::Top1Accuracy;
    let mut small = Vec::new();
    let mut large = Vec::new();
    for s in 0..5u64 {
        let data = make_blobs(1000, 8, 4, 2.5, s).unwrap();
        let parts = split(&data, &SplitSpec { train: 60, val: 200, pool: 100, seed: s }).unwrap();
        let train = inject_noise(&parts.train, &[NoiseLevel { fraction: 0.5, sigma: 2.0 }], s).unwrap();
        let corpus = build_corpus(&train, &parts.val, &SamplerSpec::new(500, seed::derive(s, &[1])), &proxy, metric, WORKERS, None)
            .unwrap();
        let heldout =
            build_corpus(&train, &parts.val, &SamplerSpec::new(100, seed::derive(s, &[2])), &proxy, metric, WORKERS, None)
                .unwrap();
        let score = |samples: &[SubsetSample]| {
            let (model, _) = fit(samples, train.features(), &config, &fit_config, seed::derive(s, &[3])).unwrap();
            let subsets: Vec<&[usize]> = heldout.iter().map(|h| h.indices.as_slice()).collect();
            let preds = model.predict_subsets(train.features(), &subsets).unwrap();
            let truth: Vec<f64> = heldout.iter().map(|h| h.utility).collect();
            stats::spearman(&preds, &truth).unwrap_or(0.0)
        };
        small.push(score(&corpus[..50]));
        large.push(score(&corpus));
    }
    let (mean_small, mean_large) = (stats::mean(&small), stats::mean(&large));
    Some(check(
        mean_large >= mean_small,
        format!(
            "held-out Spearman T=500 mean {mean_large:.3} {:?} vs T=50 mean {mean_small:.3} {:?}",
            rounded(&large),
            rounded(&small)
        ),
    ))
}

const DETERMINISM_CONFIG: &str = r#"
seed = 21
repeats = 2

[dataset]
kind = "blobs"
samples = 1200
dim = 6
classes = 3
separation = 2.5

[split]
train = 50
val = 150
pool = 300

[[corruptions]]
kind = "gaussian_noise"
levels = [{ fraction = 0.4, sigma = 1.0 }]

[proxy]
learning_rate = 0.1
epochs = 30

[sampler]
subsets = 200

[utility_model.network]
phi_hidden = [32]
rho_hidden = [32]
set_features = 16

[utility_model.fit]
learning_rate = 0.001
max_epochs = 60

[selection]
budgets = [60, 150]
block_size = 50
epsilon = 1e-3
strategies = [{ kind = "dulo" }, { kind = "random" }, { kind = "dulo_uncertainty_filtered", beta = 200 }]

[target]
architecture = { kind = "mlp", hidden = [32] }
learning_rate = 0.05
epochs = 20

[planted]
groups = 5
"#;

fn csv_artifacts(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") || path.file_name().is_some_and(|n| n == "corpus.txt") {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Option<Outcome> {
    let mut runs = Vec::new();
    for workers in [1usize, 8] {
        for _ in 0..2 {
            let out = tempfile::tempdir().unwrap();
            let overrides = vec![
                ("workers".to_string(), workers.to_string()),
                ("output_dir".to_string(), format!("{:?}", out.path().display().to_string())),
            ];
            let config = ExperimentConfig::from_toml(DETERMINISM_CONFIG, &overrides).unwrap();
            Harness::new(config).unwrap().run_all().unwrap();
            runs.push((workers, csv_artifacts(out.path())));
        }
    }
    let reference = &runs[0].1;
    let names: Vec<&str> = reference.iter().map(|(n, _)| n.as_str()).collect();
    let has = |needle: &str| names.iter().any(|n| n.contains(needle));
    let complete = has("corpus.txt") && has("selections/") && has("evaluation.csv");
    let differing: Vec<usize> = runs.iter().filter(|(_, files)| files != reference).map(|(w, _)| *w).collect();
    Some(check(
        complete && differing.is_empty(),
        format!("{} CSV/corpus files compared across 4 runs (workers 1,1,8,8); differing runs by worker count {differing:?}", reference.len()),
    ))
}

fn mnist_shape() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("MNIST_DIR")?);
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    if !images.is_file() || !labels.is_file() {
        return Some(Err(format!("MNIST_DIR set but {} or {} missing", images.display(), labels.display())));
    }
    let out = tempfile::tempdir().unwrap();
    let quoted = |p: &Path| format!("{:?}", p.display().to_string());
    let overrides = vec![
        ("workers".to_string(), WORKERS.to_string()),
        ("output_dir".to_string(), quoted(out.path())),
        ("dataset.images".to_string(), quoted(&images)),
        ("dataset.labels".to_string(), quoted(&labels)),
    ];
    let config = ExperimentConfig::load(&workspace_root().join("configs/mnist.toml"), &overrides).unwrap();
    let summary = Harness::new(config).unwrap().run_all().unwrap();
    let mean = |s: &str| summary.evaluation.iter().find(|e| e.strategy == s).unwrap().mean;
    let (dulo, random) = (mean("dulo"), mean("random"));
    Some(check(dulo > random, format!("accuracy dulo {dulo:.4} vs random {random:.4} over 10 seeds")))
}

fn rounded(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect()
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient suite", limit: Duration::from_secs(60), run: gradient_suite },
        Criterion { id: 2, name: "permutation invariance", limit: Duration::from_secs(60), run: permutation_invariance },
        Criterion { id: 3, name: "stochastic greedy guarantee", limit: Duration::from_secs(120), run: greedy_guarantee },
        Criterion { id: 4, name: "greedy oracle equivalence", limit: Duration::from_secs(60), run: greedy_oracle },
        Criterion { id: 5, name: "diminishing-return trend", limit: Duration::from_secs(300), run: diminishing_returns },
        Criterion { id: 6, name: "proxy transferability", limit: Duration::from_secs(600), run: transferability },
        Criterion { id: 7, name: "end-to-end noisy selection", limit: Duration::from_secs(900), run: noisy_selection },
        Criterion { id: 8, name: "sample complexity", limit: Duration::from_secs(600), run: sample_complexity },
        Criterion { id: 9, name: "determinism", limit: Duration::from_secs(300), run: determinism },
        Criterion { id: 10, name: "MNIST imbalance ordering (optional)", limit: Duration::from_secs(7200), run: mnist_shape },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Some(Err("panicked".to_string())));
        let elapsed = start.elapsed();
        let line = match outcome {
            None => format!("SKIP criterion {:>2} {}: MNIST_DIR not set", c.id, c.name),
            Some(Ok(detail)) if elapsed <= c.limit => {
                format!("PASS criterion {:>2} {} ({:.1}s): {detail}", c.id, c.name, elapsed.as_secs_f64())
            }
            Some(Ok(detail)) => {
                failed.push(c.id);
                format!(
                    "FAIL criterion {:>2} {} ({:.1}s, limit {}s): {detail}",
                    c.id,
                    c.name,
                    elapsed.as_secs_f64(),
                    c.limit.as_secs()
                )
            }
            Some(Err(detail)) => {
                failed.push(c.id);
                format!("FAIL criterion {:>2} {} ({:.1}s): {detail}", c.id, c.name, elapsed.as_secs_f64())
            }
        };
        println!("{line}");
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
