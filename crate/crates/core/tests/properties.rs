mod common;

use common::{direct_value, exact_greedy, random_matrix, Coverage};
use ndarray::{Array2, Axis};
use oneround::data::{inject_imbalance, inject_noise, make_blobs, split, NoiseLevel, SplitSpec};
use oneround::deepsets::{DeepSetsConfig, SetSumCache, UtilityModel};
use oneround::diagnostics::{marginal_curve, CurveSpec};
use oneround::greedy::{select, stochastic_greedy, SampleSize, SelectionSpec, Strategy};
use oneround::nn::{self, Activation, DenseNet, Loss, OptimizerConfig, Targets, TrainConfig};
use oneround::proxy::{train_and_score, MetricSpec, ProxySpec};
use oneround::seed;
use oneround::utility::{build_corpus, SamplerSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn small_model(dim: usize, seed: u64) -> UtilityModel {
    let config = DeepSetsConfig {
        phi_hidden: vec![16],
        rho_hidden: vec![16],
        set_features: 8,
    };
    UtilityModel::random(dim, &config, &mut seed::rng(seed)).unwrap()
}

/// φ arbitrary, ρ a single linear layer: `f(S) = Σ g(x) + c`.
fn modular_model(dim: usize, seed: u64) -> UtilityModel {
    let config = DeepSetsConfig {
        phi_hidden: vec![8],
        rho_hidden: vec![],
        set_features: 4,
    };
    UtilityModel::random(dim, &config, &mut seed::rng(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn set_model_ignores_element_order(seed in any::<u64>(), size in 1usize..=60, dim in 1usize..6) {
        let mut rng = seed::rng(seed);
        let model = small_model(dim, seed);
        let set = random_matrix(size, dim, &mut rng);
        let reference = model.predict(set.view()).unwrap();
        let mut order: Vec<usize> = (0..size).collect();
        for _ in 0..20 {
            order.shuffle(&mut rng);
            let permuted = set.select(Axis(0), &order);
            let value = model.predict(permuted.view()).unwrap();
            prop_assert!((value - reference).abs() <= 1e-9, "{value} vs {reference}");
        }
    }

    #[test]
    fn full_sample_greedy_is_exact_greedy_on_coverage(seed in any::<u64>(), n in 5usize..25, budget in 1usize..6) {
        let mut rng = seed::rng(seed);
        let budget = budget.min(n);
        let cover = Coverage::random(n, 30, &mut rng);
        let expected = exact_greedy(n, budget, |s| cover.value_of(s));
        let mut objective = cover.clone();
        let pool: Vec<usize> = (0..n).collect();
        let picks = stochastic_greedy(&mut objective, &pool, budget, 0.5, SampleSize::Full, false, &mut rng).unwrap();
        let got: Vec<usize> = picks.iter().map(|p| p.element).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn full_sample_greedy_is_exact_greedy_on_set_model(seed in any::<u64>(), n in 5usize..30, budget in 1usize..8) {
        let mut rng = seed::rng(seed);
        let budget = budget.min(n);
        let model = small_model(3, seed);
        let pool = random_matrix(n, 3, &mut rng);
        let expected = exact_greedy(n, budget, |s| direct_value(&model, pool.view(), s));
        let mut cache = SetSumCache::new(&model, pool.view()).unwrap();
        let ids: Vec<usize> = (0..n).collect();
        let picks = stochastic_greedy(&mut cache, &ids, budget, 0.5, SampleSize::Full, false, &mut rng).unwrap();
        let got: Vec<usize> = picks.iter().map(|p| p.element).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn selection_is_duplicate_free_and_exact_size(
        seed in any::<u64>(),
        n in 20usize..200,
        budget_share in 0.05f64..0.9,
        block_share in 0.1f64..1.0,
    ) {
        let model = small_model(2, seed);
        let pool = random_matrix(n, 2, &mut seed::rng(seed ^ 1));
        let budget = ((n as f64 * budget_share) as usize).max(1);
        let block_size = ((n as f64 * block_share) as usize).max(1);
        let spec = SelectionSpec { budget, block_size, epsilon: 0.01, seed, strategy: Strategy::Dulo };
        prop_assume!(spec.validate(n).is_ok());
        let result = select(&model, pool.view(), &spec, None, 2, false).unwrap();
        let mut chosen = result.selected();
        prop_assert_eq!(chosen.len(), budget);
        chosen.sort_unstable();
        chosen.dedup();
        prop_assert_eq!(chosen.len(), budget);
        prop_assert!(chosen.iter().all(|&i| i < n));
        let orders: Vec<usize> = result.picks.iter().map(|p| p.pick_order).collect();
        prop_assert_eq!(orders, (0..budget).collect::<Vec<_>>());
    }

    #[test]
    fn recorded_values_replay_and_picks_maximize_over_sample(seed in any::<u64>(), n in 30usize..120) {
        let model = small_model(3, seed);
        let pool = random_matrix(n, 3, &mut seed::rng(seed ^ 2));
        let spec = SelectionSpec { budget: n / 3, block_size: n / 2, epsilon: 0.1, seed, strategy: Strategy::Dulo };
        let result = select(&model, pool.view(), &spec, None, 1, true).unwrap();
        for block in 0..result.blocks.len() {
            let mut picks: Vec<_> = result.picks.iter().filter(|p| p.block_id == block).collect();
            picks.sort_by_key(|p| p.step);
            let mut prefix = Vec::new();
            for p in picks {
                let sampled = p.sampled.as_ref().expect("samples recorded");
                prop_assert!(sampled.contains(&p.pool_index));
                let best = sampled
                    .iter()
                    .map(|&e| {
                        let mut with = prefix.clone();
                        with.push(e);
                        direct_value(&model, pool.view(), &with)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                prefix.push(p.pool_index);
                let replayed = direct_value(&model, pool.view(), &prefix);
                let recorded = p.predicted_value.unwrap();
                prop_assert!((replayed - recorded).abs() <= 1e-9, "{replayed} vs {recorded}");
                prop_assert!(recorded >= best - 1e-9, "pick {recorded} below sampled best {best}");
            }
        }
    }

    #[test]
    fn modular_objective_has_no_cross_block_interaction(seed in any::<u64>(), n in 40usize..160) {
        let model = modular_model(3, seed);
        let pool = random_matrix(n, 3, &mut seed::rng(seed ^ 3));
        let budget = n / 4;
        let blocked = SelectionSpec { budget, block_size: n / 4, epsilon: 0.05, seed, strategy: Strategy::Dulo };
        let result = select(&model, pool.view(), &blocked, None, 2, false).unwrap();
        let empty = direct_value(&model, pool.view(), &[]);
        let whole = direct_value(&model, pool.view(), &result.selected()) - empty;
        let per_block: f64 = result.picks.iter().map(|p| p.marginal_gain.unwrap()).sum();
        prop_assert!((whole - per_block).abs() <= 1e-9 * whole.abs().max(1.0), "{whole} vs {per_block}");
    }

    #[test]
    fn training_is_a_pure_function_of_seed(seed in any::<u64>()) {
        let data = make_blobs(80, 3, 3, 3.0, seed).unwrap();
        let spec = ProxySpec::default();
        let labels = data.labels().unwrap();
        let a = oneround::proxy::train_classifier(&spec, data.features(), labels, 3, seed).unwrap();
        let b = oneround::proxy::train_classifier(&spec, data.features(), labels, 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn splits_are_disjoint_and_reproducible(seed in any::<u64>(), train in 1usize..50, val in 1usize..50, pool in 1usize..100) {
        let data = make_blobs(200, 2, 2, 2.0, 0).unwrap();
        let spec = SplitSpec { train, val, pool, seed };
        let a = split(&data, &spec).unwrap();
        let b = split(&data, &spec).unwrap();
        prop_assert_eq!(&a.indices, &b.indices);
        let mut all: Vec<usize> = a.indices.iter().flatten().copied().collect();
        prop_assert_eq!(all.len(), train + val + pool);
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), train + val + pool);
    }

    #[test]
    fn noise_touches_only_designated_rows(seed in any::<u64>(), fraction in 0.0f64..1.0, sigma in 0.1f64..2.0) {
        let data = make_blobs(120, 4, 3, 2.0, seed).unwrap();
        let noisy = inject_noise(&data, &[NoiseLevel { fraction, sigma }], seed).unwrap();
        prop_assert_eq!(noisy.labels(), data.labels());
        let record = noisy.noise_record().unwrap();
        for (i, &applied) in record.iter().enumerate() {
            let changed = noisy.features().row(i) != data.features().row(i);
            prop_assert_eq!(changed, applied > 0.0, "row {}", i);
        }
    }

    #[test]
    fn imbalance_histogram_tracks_proportions(seed in any::<u64>(), raw in prop::collection::vec(0.05f64..1.0, 4), target in 40usize..200) {
        let total: f64 = raw.iter().sum();
        let proportions: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let data = make_blobs(1000, 2, 4, 2.0, seed).unwrap();
        let out = inject_imbalance(&data, &proportions, target, seed).unwrap();
        prop_assert_eq!(out.len(), target);
        let hist = out.class_histogram().unwrap();
        let l1: f64 = hist.iter().zip(&proportions).map(|(&c, p)| (c as f64 / target as f64 - p).abs()).sum();
        prop_assert!(l1 <= 4.0 / target as f64, "l1 {l1}");
    }

    #[test]
    fn curve_on_modular_oracle_is_exact(seed in any::<u64>(), n in 5usize..40) {
        let weights: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let modular = |s: &[usize]| s.iter().map(|&i| weights[i]).sum::<f64>();
        let spec = CurveSpec::geometric(n, 4, 3.min(n));
        let curve = marginal_curve(n, &modular, &spec, seed, 1).unwrap();
        for (p, &probe) in curve.probes.iter().enumerate() {
            for c in &curve.contributions[p] {
                prop_assert!((c - weights[probe]).abs() < 1e-12);
            }
        }
        let constant = |_: &[usize]| 0.5;
        let flat = marginal_curve(n, &constant, &spec, seed, 1).unwrap();
        prop_assert!(flat.mean.iter().all(|&m| m == 0.0));
    }
}

#[test]
fn cache_agrees_with_recompute_over_ten_thousand_operations() {
    let mut rng = seed::rng(17);
    let model = small_model(4, 17);
    let pool = random_matrix(5000, 4, &mut rng);
    let mut cache = SetSumCache::new(&model, pool.view()).unwrap();
    let mut members: Vec<usize> = Vec::new();
    let mut outside: Vec<usize> = (0..5000).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let pos = rng.random_range(0..outside.len());
        let candidate = outside[pos];
        if rng.random_bool(0.3) {
            let value = cache.commit(candidate).unwrap();
            outside.swap_remove(pos);
            members.push(candidate);
            worst = worst.max((value - direct_value(&model, pool.view(), &members)).abs());
        } else {
            let value = cache.value_with(candidate).unwrap();
            let mut with = members.clone();
            with.push(candidate);
            worst = worst.max((value - direct_value(&model, pool.view(), &with)).abs());
        }
    }
    assert!(worst <= 1e-9, "largest disagreement {worst}");
}

#[test]
fn epoch_loss_falls_on_separable_blobs() {
    let mut falling = 0;
    for s in 0..20u64 {
        let data = make_blobs(100, 2, 2, 6.0, s).unwrap();
        let mut rng = seed::rng(s);
        let mut net = DenseNet::random(&[2, 2], Activation::Relu, &mut rng).unwrap();
        let config = TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            epochs: 30,
            batch_size: 32,
        };
        let losses = nn::train(
            &mut net,
            data.features(),
            Targets::Classes(data.labels().unwrap()),
            Loss::SoftmaxCrossEntropy,
            &config,
            &mut rng,
        )
        .unwrap();
        if losses[29] < losses[0] {
            falling += 1;
        }
    }
    assert!(falling >= 19, "{falling}/20 seeds");
}

#[test]
fn corpus_is_identical_for_any_worker_count_and_replays() {
    let data = make_blobs(400, 3, 3, 2.0, 5).unwrap();
    let parts = split(&data, &SplitSpec { train: 40, val: 100, pool: 10, seed: 5 }).unwrap();
    let proxy = ProxySpec {
        learning_rate: 0.1,
        epochs: 10,
        ..ProxySpec::default()
    };
    let sampler = SamplerSpec::new(40, 9);
    let metric = MetricSpec::Top1Accuracy;
    let one = build_corpus(&parts.train, &parts.val, &sampler, &proxy, metric, 1, None).unwrap();
    let eight = build_corpus(&parts.train, &parts.val, &sampler, &proxy, metric, 8, None).unwrap();
    assert_eq!(one, eight);
    for s in &one {
        assert!((0.0..=1.0).contains(&s.utility));
        let replay = train_and_score(&s.indices, &parts.train, &parts.val, &proxy, metric, s.seed).unwrap();
        assert_eq!(replay, s.utility);
    }
}

#[test]
fn modular_model_is_modular() {
    let model = modular_model(3, 4);
    let pool: Array2<f64> = random_matrix(10, 3, &mut seed::rng(4));
    let empty = direct_value(&model, pool.view(), &[]);
    let whole = direct_value(&model, pool.view(), &(0..10).collect::<Vec<_>>()) - empty;
    let parts: f64 = (0..10).map(|i| direct_value(&model, pool.view(), &[i]) - empty).sum();
    assert!((whole - parts).abs() < 1e-9);
}
