//! Stochastic greedy maximization of a set function, and block-wise selection
//! from the unlabeled pool with a learned utility model.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Pool;
use crate::deepsets::{SetSumCache, UtilityModel};
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, DenseNet};
use crate::par;
use crate::seed::{self, Rng};

/// Incrementally evaluated set function over elements `0..n`.
pub trait SetObjective {
    /// `f(S ∪ {element})` without changing `S`.
    fn value_with(&self, element: usize) -> Result<f64>;
    /// Add `element` to `S`; returns the new `f(S)`.
    fn commit(&mut self, element: usize) -> Result<f64>;
    fn current_value(&self) -> f64;
}

impl SetObjective for SetSumCache<'_> {
    fn value_with(&self, element: usize) -> Result<f64> {
        SetSumCache::value_with(self, element)
    }

    fn commit(&mut self, element: usize) -> Result<f64> {
        SetSumCache::commit(self, element)
    }

    fn current_value(&self) -> f64 {
        SetSumCache::current_value(self)
    }
}

/// Candidate sample size per greedy step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSize {
    /// `⌈(n/m)·ln(1/ε)⌉` for `n` pool elements and budget `m`.
    Formula,
    /// Every remaining element: plain greedy.
    Full,
    Fixed(usize),
}

/// `⌈(n/m)·ln(1/ε)⌉`, at least 1.
pub fn formula_sample_size(pool: usize, budget: usize, epsilon: f64) -> usize {
    if budget == 0 {
        return 0;
    }
    let s = (pool as f64 / budget as f64) * (1.0 / epsilon).ln();
    (s.ceil() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyPick {
    pub element: usize,
    /// `f(S)` right after this pick.
    pub value: f64,
    pub gain: f64,
    /// The sampled candidates `Z`, when recording is enabled.
    pub sampled: Option<Vec<usize>>,
}

/// Pick `budget` elements of `pool`. Each step samples `Z` from the remaining
/// elements and commits `argmax_{e∈Z} f(S ∪ {e})`; ties go to the lowest
/// element id.
pub fn stochastic_greedy<O: SetObjective>(
    objective: &mut O,
    pool: &[usize],
    budget: usize,
    epsilon: f64,
    size: SampleSize,
    record: bool,
    rng: &mut Rng,
) -> Result<Vec<GreedyPick>> {
    const OP: &str = "greedy::stochastic_greedy";
    if budget > pool.len() {
        return Err(Error::invalid_spec(OP, format!("budget {budget} exceeds pool of {}", pool.len())));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid_spec(OP, format!("epsilon {epsilon} outside (0, 1)")));
    }
    let per_step = match size {
        SampleSize::Formula => formula_sample_size(pool.len(), budget, epsilon),
        SampleSize::Full => usize::MAX,
        SampleSize::Fixed(s) => s.max(1),
    };
    let mut remaining = pool.to_vec();
    let mut picks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let sampled: Vec<usize> = if per_step >= remaining.len() {
            (0..remaining.len()).collect()
        } else {
            rand::seq::index::sample(rng, remaining.len(), per_step).into_vec()
        };
        let mut best: Option<(usize, usize, f64)> = None;
        for &pos in &sampled {
            let e = remaining[pos];
            let v = objective.value_with(e)?;
            let better = match best {
                None => true,
                Some((_, be, bv)) => v > bv || (v == bv && e < be),
            };
            if better {
                best = Some((pos, e, v));
            }
        }
        let (pos, element, _) = best.expect("at least one candidate per step");
        let before = objective.current_value();
        let value = objective.commit(element)?;
        picks.push(GreedyPick {
            element,
            value,
            gain: value - before,
            sampled: record.then(|| sampled.iter().map(|&p| remaining[p]).collect()),
        });
        remaining.swap_remove(pos);
    }
    Ok(picks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Dulo,
    Random,
    DuloUncertaintyFiltered { beta: usize },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Dulo => "dulo".into(),
            Strategy::Random => "random".into(),
            Strategy::DuloUncertaintyFiltered { beta } => format!("dulo_uncertainty_{beta}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub budget: usize,
    pub block_size: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub strategy: Strategy,
}

impl SelectionSpec {
    pub fn validate(&self, pool: usize) -> Result<()> {
        const OP: &str = "greedy::select";
        if self.budget == 0 || self.budget > pool {
            return Err(Error::invalid_spec(OP, format!("budget {} must lie in [1, {pool}]", self.budget)));
        }
        if self.strategy != Strategy::Random {
            if self.block_size == 0 || self.block_size > pool {
                return Err(Error::invalid_spec(OP, format!("block size {} must lie in [1, {pool}]", self.block_size)));
            }
            let per_block = (self.budget as f64 * self.block_size as f64 / pool as f64).round();
            if per_block < 1.0 {
                return Err(Error::invalid_spec(OP, "per-block budget rounds to zero; raise the block size"));
            }
            if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
                return Err(Error::invalid_spec(OP, format!("epsilon {} outside (0, 1)", self.epsilon)));
            }
        }
        if let Strategy::DuloUncertaintyFiltered { beta } = self.strategy {
            if beta == 0 || beta > pool || self.budget > beta {
                return Err(Error::invalid_spec(OP, format!("beta {beta} must lie in [budget, {pool}]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PickRecord {
    pub pick_order: usize,
    pub pool_index: usize,
    pub block_id: usize,
    /// Position of the pick inside its block.
    pub step: usize,
    pub predicted_value: Option<f64>,
    pub marginal_gain: Option<f64>,
    /// Pool indices of the sampled candidates, when recorded.
    pub sampled: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub strategy: String,
    pub picks: Vec<PickRecord>,
    pub blocks: Vec<Vec<usize>>,
    pub block_seconds: Vec<f64>,
}

impl SelectionResult {
    pub fn selected(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.pool_index).collect()
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::invalid_input("greedy::write_csv", e.to_string());
        w.write_record(["pick_order", "pool_index", "block_id", "predicted_value", "marginal_gain"])
            .map_err(fail)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.picks {
            w.write_record([
                p.pick_order.to_string(),
                p.pool_index.to_string(),
                p.block_id.to_string(),
                opt(p.predicted_value),
                opt(p.marginal_gain),
            ])
            .map_err(fail)?;
        }
        w.flush().map_err(|e| Error::invalid_input("greedy::write_csv", e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io("greedy::save_csv", path, e))
    }

    pub fn read_csv<R: Read>(input: R, source: &str, strategy: &str) -> Result<SelectionResult> {
        const OP: &str = "greedy::read_csv";
        let mut reader = csv::Reader::from_reader(input);
        let mut picks = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let parse_err = |msg: String| Error::Parse {
                op: OP,
                path: source.to_string(),
                line,
                msg,
            };
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            if record.len() != 5 {
                return Err(parse_err(format!("expected 5 fields, found {}", record.len())));
            }
            let int = |j: usize| -> Result<usize> {
                record[j].parse().map_err(|_| parse_err(format!("bad integer {:?}", &record[j])))
            };
            let float = |j: usize| -> Result<Option<f64>> {
                if record[j].is_empty() {
                    Ok(None)
                } else {
                    record[j]
                        .parse()
                        .map(Some)
                        .map_err(|_| parse_err(format!("bad number {:?}", &record[j])))
                }
            };
            picks.push(PickRecord {
                pick_order: int(0)?,
                pool_index: int(1)?,
                block_id: int(2)?,
                step: 0,
                predicted_value: float(3)?,
                marginal_gain: float(4)?,
                sampled: None,
            });
        }
        Ok(SelectionResult {
            strategy: strategy.to_string(),
            picks,
            blocks: Vec::new(),
            block_seconds: Vec::new(),
        })
    }

    pub fn load_csv(path: &Path, strategy: &str) -> Result<SelectionResult> {
        let file = std::fs::File::open(path).map_err(|e| Error::io("greedy::read_csv", path, e))?;
        Self::read_csv(file, &path.display().to_string(), strategy)
    }
}

/// Per-block budgets `⌊M·|b|/N⌋`, with the shortfall handed one at a time to
/// the earliest blocks that still have room, so they sum to `M`.
pub fn block_budgets(block_sizes: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = block_sizes.iter().sum();
    let mut budgets: Vec<usize> = block_sizes.iter().map(|&b| budget * b / total.max(1)).collect();
    let mut short = budget.saturating_sub(budgets.iter().sum());
    while short > 0 {
        let before = short;
        for (m, &b) in budgets.iter_mut().zip(block_sizes) {
            if short > 0 && *m < b {
                *m += 1;
                short -= 1;
            }
        }
        if short == before {
            break;
        }
    }
    budgets
}

fn timer() -> impl FnOnce() -> f64 {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let start = std::time::Instant::now();
        move || start.elapsed().as_secs_f64()
    }
    #[cfg(target_arch = "wasm32")]
    {
        || 0.0
    }
}

/// Blocked stochastic greedy over `candidates` (all pool rows when `None`).
///
/// Candidates are shuffled into blocks of `spec.block_size`; each block runs
/// stochastic greedy on the model independently with its own cache and rng.
/// Picks are ordered by step within block, then block id.
pub fn select(
    model: &UtilityModel,
    pool: ArrayView2<f64>,
    spec: &SelectionSpec,
    candidates: Option<&[usize]>,
    workers: usize,
    record_samples: bool,
) -> Result<SelectionResult> {
    const OP: &str = "greedy::select";
    if pool.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            op: OP,
            expected: model.input_dim(),
            got: pool.ncols(),
        });
    }
    let mut order: Vec<usize> = match candidates {
        Some(c) => c.to_vec(),
        None => (0..pool.nrows()).collect(),
    };
    if let Some(&bad) = order.iter().find(|&&i| i >= pool.nrows()) {
        return Err(Error::invalid_input(OP, format!("candidate {bad} outside pool of {}", pool.nrows())));
    }
    let n = order.len();
    let block_spec = SelectionSpec {
        strategy: Strategy::Dulo,
        block_size: spec.block_size.min(n),
        ..spec.clone()
    };
    block_spec.validate(n)?;

    order.shuffle(&mut seed::rng(seed::derive(spec.seed, &[0])));
    let blocks: Vec<Vec<usize>> = order.chunks(block_spec.block_size).map(<[usize]>::to_vec).collect();
    let budgets = block_budgets(&blocks.iter().map(Vec::len).collect::<Vec<_>>(), spec.budget);

    let outcomes = par::map_indexed(blocks.len(), workers, |b| -> Result<(Vec<GreedyPick>, f64)> {
        let elapsed = timer();
        let block = &blocks[b];
        let features = pool.select(Axis(0), block);
        let mut cache = SetSumCache::new(model, features.view())?;
        let local: Vec<usize> = (0..block.len()).collect();
        let mut rng = seed::rng(seed::derive(spec.seed, &[1, b as u64]));
        let picks = stochastic_greedy(
            &mut cache,
            &local,
            budgets[b],
            spec.epsilon,
            SampleSize::Formula,
            record_samples,
            &mut rng,
        )?;
        Ok((picks, elapsed()))
    });

    let mut picks = Vec::with_capacity(spec.budget);
    let mut block_seconds = Vec::with_capacity(blocks.len());
    for (b, outcome) in outcomes.into_iter().enumerate() {
        let (block_picks, secs) = outcome?;
        block_seconds.push(secs);
        for (step, p) in block_picks.into_iter().enumerate() {
            picks.push(PickRecord {
                pick_order: 0,
                pool_index: blocks[b][p.element],
                block_id: b,
                step,
                predicted_value: Some(p.value),
                marginal_gain: Some(p.gain),
                sampled: p.sampled.map(|z| z.iter().map(|&l| blocks[b][l]).collect()),
            });
        }
    }
    picks.sort_by_key(|p| (p.step, p.block_id));
    for (i, p) in picks.iter_mut().enumerate() {
        p.pick_order = i;
    }
    Ok(SelectionResult {
        strategy: spec.strategy.label(),
        picks,
        blocks,
        block_seconds,
    })
}

/// Uniform sample of `budget` pool rows without replacement.
pub fn select_random(pool_len: usize, budget: usize, seed: u64) -> Result<SelectionResult> {
    if budget > pool_len {
        return Err(Error::invalid_spec(
            "greedy::select_random",
            format!("budget {budget} exceeds pool of {pool_len}"),
        ));
    }
    let chosen = rand::seq::index::sample(&mut seed::rng(seed), pool_len, budget).into_vec();
    let picks = chosen
        .into_iter()
        .enumerate()
        .map(|(i, pool_index)| PickRecord {
            pick_order: i,
            pool_index,
            block_id: 0,
            step: i,
            predicted_value: None,
            marginal_gain: None,
            sampled: None,
        })
        .collect();
    Ok(SelectionResult {
        strategy: Strategy::Random.label(),
        picks,
        blocks: Vec::new(),
        block_seconds: Vec::new(),
    })
}

/// Top-1 softmax margin (largest minus second-largest probability) per row.
pub fn softmax_margins(logits: &ndarray::Array2<f64>) -> Vec<f64> {
    softmax_rows(logits)
        .outer_iter()
        .map(|row| {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in row {
                if p > first {
                    second = first;
                    first = p;
                } else if p > second {
                    second = p;
                }
            }
            if second.is_finite() { first - second } else { first }
        })
        .collect()
}

/// The `beta` pool rows the classifier is least sure about (smallest margin,
/// ties to the lower index), returned in ascending index order.
pub fn uncertainty_filter(classifier: &DenseNet, pool: &Pool, beta: usize) -> Result<Vec<usize>> {
    const OP: &str = "greedy::uncertainty_filter";
    if beta == 0 || beta > pool.len() {
        return Err(Error::invalid_spec(OP, format!("beta {beta} must lie in [1, {}]", pool.len())));
    }
    let margins = softmax_margins(&classifier.forward(pool.features())?);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));
    let mut kept = order[..beta].to_vec();
    kept.sort_unstable();
    Ok(kept)
}
