//! End-to-end pipeline: data preparation, utility corpus, set-model fit,
//! selection, target-model evaluation and diagnostics, with every artifact
//! written under one output directory.
//!
//! ```text
//! <out>/config.json
//! <out>/manifest.json
//! <out>/evaluation.csv
//! <out>/repeat_000/corpus.txt
//! <out>/repeat_000/model/{phi.bin,rho.bin,manifest.json}
//! <out>/repeat_000/fit_report.json
//! <out>/repeat_000/selections/<strategy>_m<budget>.csv
//! <out>/diagnostics/...
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, DatasetSource, ExperimentConfig};
use crate::corpus::{read_corpus, SubsetSample};
use crate::data::{inject_imbalance, inject_noise, load_csv, load_idx, make_blobs, CorruptionSpec, Dataset, Pool};
use crate::deepsets::UtilityModel;
use crate::diagnostics::{
    marginal_curve, plant_variants, rank_analysis, save_with, transfer_report, CurveSpec, PlantedGroup, ProxyUtility,
};
use crate::error::{Error, Result};
use crate::greedy::{select, select_random, uncertainty_filter, SelectionResult, SelectionSpec, Strategy};
use crate::par;
use crate::proxy::{score, train_classifier, MetricSpec};
use crate::seed::{self, stage};
use crate::stats;
use crate::utility::{build_corpus, fit_with_holdout, SamplerSpec, UtilityFitReport};

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "ONEROUND_OUT_DIR";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// One repeat's data: labeled train/validation splits, the hidden pool and
/// the clean held-out test split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub repeat: usize,
    pub repeat_seed: u64,
    pub train: Dataset,
    pub val: Dataset,
    pub pool: Pool,
    pub test: Dataset,
    pub planted: Vec<PlantedGroup>,
}

/// Target test accuracy of one strategy at one budget, over repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub strategy: String,
    pub budget: usize,
    pub mean: f64,
    pub stderr: f64,
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub repeat: usize,
    pub strategy: String,
    pub budget: usize,
    pub mean_rank_clean: f64,
    /// Mean rank of the variants with the largest planted σ.
    pub mean_rank_noisiest: f64,
    pub clean_first: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub curve_trend: Option<f64>,
    pub transfer_spearman: Option<f64>,
    pub ranks: Vec<RankSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Curve,
    Transfer,
    Ranks,
    All,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub upstream_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub fits: Vec<UtilityFitReport>,
    pub evaluation: Vec<EvalRecord>,
    pub diagnostics: DiagnosticsSummary,
}

pub struct Harness {
    config: ExperimentConfig,
    out: PathBuf,
    source: OnceLock<Dataset>,
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let out = config.output_dir.clone();
        Ok(Harness {
            config,
            out,
            source: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        seed::derive(self.config.seed, &[repeat as u64])
    }

    pub fn repeat_dir(&self, repeat: usize) -> PathBuf {
        self.out.join(format!("repeat_{repeat:03}"))
    }

    pub fn selection_path(&self, repeat: usize, strategy: &Strategy, budget: usize) -> PathBuf {
        self.repeat_dir(repeat)
            .join("selections")
            .join(format!("{}_m{budget}.csv", strategy.label()))
    }

    fn source(&self) -> Result<&Dataset> {
        if let Some(ds) = self.source.get() {
            return Ok(ds);
        }
        let ds = match &self.config.dataset {
            DatasetSource::Blobs {
                samples,
                dim,
                classes,
                separation,
            } => make_blobs(
                *samples,
                *dim,
                *classes,
                *separation,
                seed::derive(self.config.seed, &[stage::DATASET]),
            )?,
            DatasetSource::Idx { images, labels } => load_idx(images, labels)?,
            DatasetSource::Csv {
                path,
                label,
                has_header,
            } => load_csv(path, label, *has_header)?,
        };
        Ok(self.source.get_or_init(|| ds))
    }

    /// Split, corrupt and plant one repeat's data. The test split is carved
    /// first and never corrupted; validation is never corrupted either.
    pub fn prepare(&self, repeat: usize) -> Result<Prepared> {
        const OP: &str = "harness::prepare";
        let cfg = &self.config;
        let src = self.source()?;
        let rs = self.repeat_seed(repeat);
        let imbalance = cfg.corruptions.iter().find_map(|c| match c {
            CorruptionSpec::ClassImbalance { proportions } => Some(proportions.clone()),
            _ => None,
        });
        let groups = cfg.planted.groups;
        let regular = cfg.split.pool - groups * (1 + cfg.planted.sigmas.len());
        let test_n = cfg.split.test_size();
        let fixed = test_n + cfg.split.train + cfg.split.val + groups;
        let needed = fixed + if imbalance.is_some() { 0 } else { regular };
        if needed > src.len() {
            return Err(Error::invalid_spec(OP, format!("configuration needs {needed} rows, dataset has {}", src.len())));
        }

        let mut order: Vec<usize> = (0..src.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(rs, &[stage::SPLIT])));
        let mut cursor = 0;
        let mut take = |n: usize| {
            let part = &order[cursor..cursor + n];
            cursor += n;
            part.to_vec()
        };
        let test = src.subset(&take(test_n))?.with_provenance("test");
        let mut train = src.subset(&take(cfg.split.train))?.with_provenance("train");
        let val = src.subset(&take(cfg.split.val))?.with_provenance("val");
        let sources = src.subset(&take(groups))?;
        let rest = order[fixed..].to_vec();

        let mut pool = match &imbalance {
            Some(props) => inject_imbalance(&src.subset(&rest)?, props, regular, seed::derive(rs, &[stage::CORRUPTION]))?,
            None => src.subset(&rest[..regular])?,
        };
        for (i, c) in cfg.corruptions.iter().enumerate() {
            if let CorruptionSpec::GaussianNoise { levels } = c {
                pool = inject_noise(&pool, levels, seed::derive(rs, &[stage::CORRUPTION, i as u64, 0]))?;
                if cfg.corrupt_labeled {
                    train = inject_noise(&train, levels, seed::derive(rs, &[stage::CORRUPTION, i as u64, 1]))?;
                }
            }
        }
        let mut planted = Vec::new();
        if groups > 0 {
            let (rows, g) = plant_variants(&sources, &cfg.planted.sigmas, pool.len(), seed::derive(rs, &[stage::PLANTED]))?;
            pool = pool.concat(&rows)?;
            planted = g;
        }
        Ok(Prepared {
            repeat,
            repeat_seed: rs,
            train,
            val,
            pool: Pool::hide(pool.with_provenance("pool")),
            test,
            planted,
        })
    }

    fn sampler(&self, repeat_seed: u64) -> SamplerSpec {
        let s = &self.config.sampler;
        SamplerSpec {
            subsets: s.subsets,
            alpha: s.alpha,
            size: s.size,
            seed: seed::derive(repeat_seed, &[stage::CORPUS]),
        }
    }

    fn mkdir(path: &Path) -> Result<()> {
        std::fs::create_dir_all(path).map_err(|e| Error::io("harness::mkdir", path, e))
    }

    /// Refuse to continue from outputs produced under different upstream
    /// settings.
    fn check_upstream(&self) -> Result<()> {
        let path = self.out.join("manifest.json");
        if !path.exists() {
            return Ok(());
        }
        let manifest = read_manifest(&path)?;
        if manifest.upstream_hash != self.config.upstream_hash() {
            return Err(Error::invalid_input(
                "harness::manifest",
                format!("{} was produced under a different configuration; rerun from build-corpus", self.out.display()),
            ));
        }
        Ok(())
    }

    pub fn build_corpus(&self, resume: bool) -> Result<Vec<Vec<SubsetSample>>> {
        Self::mkdir(&self.out)?;
        if resume {
            self.check_upstream()?;
        }
        let cfg = &self.config;
        let mut all = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let data = self.prepare(r)?;
            let dir = self.repeat_dir(r);
            Self::mkdir(&dir)?;
            let path = dir.join("corpus.txt");
            if !resume && path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io("harness::build_corpus", &path, e))?;
            }
            all.push(build_corpus(
                &data.train,
                &data.val,
                &self.sampler(data.repeat_seed),
                &cfg.proxy,
                cfg.metric,
                cfg.workers,
                Some(&path),
            )?);
        }
        self.write_manifest()?;
        Ok(all)
    }

    pub fn train_utility(&self) -> Result<Vec<UtilityFitReport>> {
        self.check_upstream()?;
        let cfg = &self.config;
        let hash = cfg.upstream_hash();
        let reports = par::map_indexed(cfg.repeats, cfg.workers, |r| -> Result<UtilityFitReport> {
            let data = self.prepare(r)?;
            let dir = self.repeat_dir(r);
            let corpus = read_corpus(&dir.join("corpus.txt"))?;
            if corpus.len() != cfg.sampler.subsets {
                return Err(Error::invalid_input(
                    "harness::train_utility",
                    format!("corpus has {} of {} records; rerun build-corpus", corpus.len(), cfg.sampler.subsets),
                ));
            }
            let (model, report) = fit_with_holdout(
                &corpus,
                data.train.features(),
                &cfg.utility_model.network,
                &cfg.utility_model.fit,
                seed::derive(data.repeat_seed, &[stage::UTILITY_FIT]),
            )?;
            model.save(&dir.join("model"), &hash)?;
            write_json(&dir.join("fit_report.json"), &report)?;
            Ok(report)
        });
        let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
        self.write_manifest()?;
        Ok(reports)
    }

    fn load_model(&self, repeat: usize, pool: &Pool) -> Result<UtilityModel> {
        let (model, manifest) = UtilityModel::load(&self.repeat_dir(repeat).join("model"))?;
        if manifest.config_hash != self.config.upstream_hash() {
            return Err(Error::invalid_input(
                "harness::select",
                "utility model was trained under a different configuration; rerun train-utility",
            ));
        }
        if model.input_dim() != pool.dim() {
            return Err(Error::DimensionMismatch {
                op: "harness::select",
                expected: pool.dim(),
                got: model.input_dim(),
            });
        }
        Ok(model)
    }

    /// One CSV per (strategy, budget) per repeat.
    pub fn select(&self) -> Result<Vec<Vec<SelectionResult>>> {
        self.check_upstream()?;
        let cfg = &self.config;
        let budgets = cfg.budgets();
        let inner_workers = if cfg.repeats > 1 { 1 } else { cfg.workers };
        let results = par::map_indexed(cfg.repeats, cfg.workers, |r| -> Result<Vec<SelectionResult>> {
            let data = self.prepare(r)?;
            let model = self.load_model(r, &data.pool)?;
            let rs = data.repeat_seed;
            Self::mkdir(&self.repeat_dir(r).join("selections"))?;
            let needs_filter = cfg
                .selection
                .strategies
                .iter()
                .any(|s| matches!(s, Strategy::DuloUncertaintyFiltered { .. }));
            let classifier = if needs_filter {
                let labels = data.train.require_labels("harness::select")?;
                Some(train_classifier(
                    &cfg.proxy,
                    data.train.features(),
                    labels,
                    data.train.class_count(),
                    seed::derive(rs, &[stage::FILTER]),
                )?)
            } else {
                None
            };
            let mut out = Vec::new();
            for &budget in &budgets {
                for (si, strategy) in cfg.selection.strategies.iter().enumerate() {
                    let spec = SelectionSpec {
                        budget,
                        block_size: cfg.block_size(),
                        epsilon: cfg.selection.epsilon,
                        seed: seed::derive(rs, &[stage::SELECTION, si as u64, budget as u64]),
                        strategy: strategy.clone(),
                    };
                    let result = match strategy {
                        Strategy::Random => select_random(data.pool.len(), budget, spec.seed)?,
                        Strategy::Dulo => {
                            spec.validate(data.pool.len())?;
                            select(&model, data.pool.features(), &spec, None, inner_workers, false)?
                        }
                        Strategy::DuloUncertaintyFiltered { beta } => {
                            spec.validate(data.pool.len())?;
                            let net = classifier.as_ref().expect("classifier trained above");
                            let candidates = uncertainty_filter(net, &data.pool, *beta)?;
                            select(&model, data.pool.features(), &spec, Some(&candidates), inner_workers, false)?
                        }
                    };
                    result.save_csv(&self.selection_path(r, strategy, budget))?;
                    out.push(result);
                }
            }
            Ok(out)
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        self.write_manifest()?;
        Ok(results)
    }

    fn load_selection(&self, repeat: usize, strategy: &Strategy, budget: usize, pool_len: usize) -> Result<Vec<usize>> {
        const OP: &str = "harness::evaluate";
        let path = self.selection_path(repeat, strategy, budget);
        let selected = SelectionResult::load_csv(&path, &strategy.label())?.selected();
        let mut seen = vec![false; pool_len];
        for &i in &selected {
            if i >= pool_len || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid_input(
                    OP,
                    format!("{} does not match the pool: index {i} is out of range or repeated", path.display()),
                ));
            }
        }
        if selected.len() != budget {
            return Err(Error::invalid_input(
                OP,
                format!("{} holds {} picks, budget is {budget}", path.display(), selected.len()),
            ));
        }
        Ok(selected)
    }

    /// Train the target model on `L_tr ∪ revealed(selection)` and score it on
    /// the test split, per strategy and budget, aggregated over repeats.
    pub fn evaluate(&self) -> Result<Vec<EvalRecord>> {
        self.check_upstream()?;
        let cfg = &self.config;
        let budgets = cfg.budgets();
        let strategies = &cfg.selection.strategies;
        let prepared = par::map_indexed(cfg.repeats, cfg.workers, |r| self.prepare(r))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, usize, usize)> = budgets
            .iter()
            .enumerate()
            .flat_map(|(b, _)| (0..strategies.len()).flat_map(move |s| (0..cfg.repeats).map(move |r| (b, s, r))))
            .collect();
        let accuracies = par::map_indexed(jobs.len(), cfg.workers, |j| -> Result<f64> {
            let (b, s, r) = jobs[j];
            let data = &prepared[r];
            let budget = budgets[b];
            let mut selected = self.load_selection(r, &strategies[s], budget, data.pool.len())?;
            selected.sort_unstable();
            let training = data.train.concat(&data.pool.reveal(&selected)?)?;
            let labels = training.require_labels("harness::evaluate")?;
            let net = train_classifier(
                &cfg.target,
                training.features(),
                labels,
                training.class_count(),
                seed::derive(data.repeat_seed, &[stage::TARGET, budget as u64]),
            )?;
            score(&net, &data.test, MetricSpec::Top1Accuracy)
        });
        let accuracies = accuracies.into_iter().collect::<Result<Vec<_>>>()?;
        let seeds: Vec<u64> = (0..cfg.repeats).map(|r| self.repeat_seed(r)).collect();
        let records: Vec<EvalRecord> = accuracies
            .chunks(cfg.repeats)
            .zip(jobs.chunks(cfg.repeats))
            .map(|(acc, job)| EvalRecord {
                strategy: strategies[job[0].1].label(),
                budget: budgets[job[0].0],
                mean: stats::mean(acc),
                stderr: stats::standard_error(acc),
                accuracies: acc.to_vec(),
                seeds: seeds.clone(),
            })
            .collect();
        save_with(&self.out.join("evaluation.csv"), |buf| write_evaluation(buf, &records))?;
        self.write_manifest()?;
        Ok(records)
    }

    pub fn diagnose(&self, which: Diagnostic) -> Result<DiagnosticsSummary> {
        let cfg = &self.config;
        let dir = self.out.join("diagnostics");
        Self::mkdir(&dir)?;
        let mut summary = DiagnosticsSummary::default();
        let wants = |d: Diagnostic| which == Diagnostic::All || which == d;
        if wants(Diagnostic::Curve) || wants(Diagnostic::Transfer) {
            let data = self.prepare(0)?;
            if wants(Diagnostic::Curve) {
                let utility = ProxyUtility {
                    train: &data.train,
                    val: &data.val,
                    spec: &cfg.proxy,
                    metric: cfg.metric,
                };
                let spec = CurveSpec::geometric(data.train.len(), cfg.diagnostics.curve_sizes, cfg.diagnostics.curve_probes);
                let curve = marginal_curve(
                    data.train.len(),
                    &utility,
                    &spec,
                    seed::derive(cfg.seed, &[stage::DIAGNOSTICS, 0]),
                    cfg.workers,
                )?;
                save_with(&dir.join("marginal_curve.csv"), |buf| curve.write_csv(buf))?;
                summary.curve_trend = curve.trend();
            }
            if wants(Diagnostic::Transfer) {
                let report = transfer_report(
                    &data.train,
                    &data.val,
                    &cfg.proxy,
                    &cfg.diagnostics.transfer_model,
                    cfg.metric,
                    &cfg.diagnostics.transfer,
                    seed::derive(cfg.seed, &[stage::DIAGNOSTICS, 1]),
                    cfg.workers,
                )?;
                save_with(&dir.join("transfer.csv"), |buf| report.write_csv(buf))?;
                summary.transfer_spearman = Some(report.spearman);
            }
        }
        if wants(Diagnostic::Ranks) && cfg.planted.groups > 0 {
            summary.ranks = self.rank_summaries(&dir)?;
        }
        write_json(&dir.join("summary.json"), &summary)?;
        self.write_manifest()?;
        Ok(summary)
    }

    fn rank_summaries(&self, dir: &Path) -> Result<Vec<RankSummary>> {
        let cfg = &self.config;
        let noisiest = cfg.planted.sigmas.len();
        let mut out = Vec::new();
        for r in 0..cfg.repeats {
            let data = self.prepare(r)?;
            for &budget in &cfg.budgets() {
                for strategy in &cfg.selection.strategies {
                    let path = self.selection_path(r, strategy, budget);
                    let selection = SelectionResult::load_csv(&path, &strategy.label())?;
                    let table = rank_analysis(&selection, data.pool.len(), &data.planted)?;
                    let name = format!("ranks_r{r:03}_{}_m{budget}.csv", strategy.label());
                    save_with(&dir.join(name), |buf| table.write_csv(buf, &cfg.planted.sigmas))?;
                    let clean = table.mean_rank(0);
                    let noisy = table.mean_rank(noisiest);
                    out.push(RankSummary {
                        repeat: r,
                        strategy: strategy.label(),
                        budget,
                        mean_rank_clean: clean,
                        mean_rank_noisiest: noisy,
                        clean_first: clean < noisy,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Corpus, utility fit, selection, evaluation, and rank diagnostics when
    /// planted groups are configured.
    pub fn run_all(&self) -> Result<RunSummary> {
        self.build_corpus(false)?;
        let fits = self.train_utility()?;
        self.select()?;
        let evaluation = self.evaluate()?;
        let diagnostics = if self.config.planted.groups > 0 {
            self.diagnose(Diagnostic::Ranks)?
        } else {
            DiagnosticsSummary::default()
        };
        Ok(RunSummary {
            fits,
            evaluation,
            diagnostics,
        })
    }

    /// Rewrite `config.json` and `manifest.json` from the files on disk.
    pub fn write_manifest(&self) -> Result<Manifest> {
        let config_path = self.out.join("config.json");
        let mut echo = serde_json::to_value(&self.config).expect("config serializes");
        if let Some(map) = echo.as_object_mut() {
            map.remove("workers");
            map.remove("output_dir");
        }
        write_json(&config_path, &echo)?;
        let mut artifacts = BTreeMap::new();
        collect_artifacts(&self.out, &self.out, &mut artifacts)?;
        let manifest = Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            config_hash: self.config.hash(),
            upstream_hash: self.config.upstream_hash(),
            artifacts,
        };
        write_json(&self.out.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

fn collect_artifacts(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    const OP: &str = "harness::manifest";
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(OP, dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(OP, dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_artifacts(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != "manifest.json" || path.parent() != Some(root)) {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(OP, &path, e))?;
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("harness::manifest", path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        op: "harness::manifest",
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io("harness::write", path, e))
}

pub fn write_evaluation<W: std::io::Write>(out: W, records: &[EvalRecord]) -> Result<()> {
    let fail = |e: csv::Error| Error::invalid_input("harness::write_evaluation", e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "budget", "mean_accuracy", "stderr", "repeats", "seeds", "accuracies"])
        .map_err(fail)?;
    let join = |v: Vec<String>| v.join(";");
    for r in records {
        w.write_record([
            r.strategy.clone(),
            r.budget.to_string(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.accuracies.len().to_string(),
            join(r.seeds.iter().map(u64::to_string).collect()),
            join(r.accuracies.iter().map(f64::to_string).collect()),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::invalid_input("harness::write_evaluation", e.to_string()))
}
