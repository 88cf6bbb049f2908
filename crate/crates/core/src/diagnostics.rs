//! Evidence procedures: marginal-contribution curves, utility transfer between
//! learners, and where planted clean/noisy variants land in a selection.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{inject_noise, Dataset, NoiseLevel};
use crate::error::{Error, Result};
use crate::greedy::SelectionResult;
use crate::par;
use crate::proxy::{train_and_score, MetricSpec, ProxySpec};
use crate::seed;
use crate::stats;

/// Set utility evaluated with an explicit training seed.
pub trait SetUtility: Sync {
    fn utility(&self, subset: &[usize], seed: u64) -> Result<f64>;
}

/// Validation score of a proxy trained on rows of `train`.
pub struct ProxyUtility<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub spec: &'a ProxySpec,
    pub metric: MetricSpec,
}

impl SetUtility for ProxyUtility<'_> {
    fn utility(&self, subset: &[usize], seed: u64) -> Result<f64> {
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        train_and_score(&sorted, self.train, self.val, self.spec, self.metric, seed)
    }
}

impl<F> SetUtility for F
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    fn utility(&self, subset: &[usize], _seed: u64) -> Result<f64> {
        Ok(self(subset))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub probes: usize,
    /// Base-set sizes; strictly increasing, each at least 1.
    pub sizes: Vec<usize>,
}

impl CurveSpec {
    /// `count` roughly geometric sizes from 1 up to `n - 1`.
    pub fn geometric(n: usize, count: usize, probes: usize) -> CurveSpec {
        let top = n.saturating_sub(1).max(1) as f64;
        let mut sizes: Vec<usize> = (0..count.max(1))
            .map(|i| {
                let f = if count > 1 { i as f64 / (count - 1) as f64 } else { 1.0 };
                top.powf(f).round() as usize
            })
            .collect();
        sizes.dedup();
        CurveSpec { probes, sizes }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        const OP: &str = "diagnostics::marginal_curve";
        if n < 3 {
            return Err(Error::invalid_input(OP, format!("need at least 3 points, got {n}")));
        }
        if self.probes == 0 || self.probes > n {
            return Err(Error::invalid_spec(OP, format!("probe count {} must lie in [1, {n}]", self.probes)));
        }
        if self.sizes.is_empty() || self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid_spec(OP, "sizes must be strictly increasing and positive"));
        }
        if *self.sizes.last().unwrap() > n - 1 {
            return Err(Error::invalid_spec(OP, format!("largest size must be at most {}", n - 1)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalCurve {
    pub sizes: Vec<usize>,
    pub mean: Vec<f64>,
    pub probes: Vec<usize>,
    /// `contributions[p][s]` for probe `p` at size index `s`.
    pub contributions: Vec<Vec<f64>>,
}

impl MarginalCurve {
    /// Spearman correlation between base size and mean contribution.
    pub fn trend(&self) -> Option<f64> {
        let sizes: Vec<f64> = self.sizes.iter().map(|&s| s as f64).collect();
        stats::spearman(&sizes, &self.mean)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut header = vec!["size".to_string(), "mean_contribution".to_string()];
        header.extend(self.probes.iter().map(|p| format!("probe_{p}")));
        let rows = self.sizes.iter().enumerate().map(|(s, size)| {
            let mut row = vec![size.to_string(), self.mean[s].to_string()];
            row.extend(self.contributions.iter().map(|c| c[s].to_string()));
            row
        });
        write_rows(out, header, rows)
    }
}

/// For each probe `j` and base size `s`: grow a random chain over the other
/// points and record `U(S_s ∪ {j}) − U(S_s)`. Both evaluations at a given
/// (probe, size) share one training seed.
pub fn marginal_curve<U: SetUtility>(
    n: usize,
    utility: &U,
    spec: &CurveSpec,
    seed: u64,
    workers: usize,
) -> Result<MarginalCurve> {
    spec.validate(n)?;
    let mut rng = seed::rng(seed::derive(seed, &[0]));
    let probes = rand::seq::index::sample(&mut rng, n, spec.probes).into_vec();
    let chains: Vec<Vec<usize>> = probes
        .iter()
        .enumerate()
        .map(|(p, &j)| {
            let mut others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            others.shuffle(&mut seed::rng(seed::derive(seed, &[1, p as u64])));
            others
        })
        .collect();

    let per_size = spec.sizes.len();
    let cells = par::map_indexed(probes.len() * per_size, workers, |cell| -> Result<f64> {
        let (p, s) = (cell / per_size, cell % per_size);
        let size = spec.sizes[s];
        let run_seed = seed::derive(seed, &[2, p as u64, size as u64]);
        let base = &chains[p][..size];
        let mut with = base.to_vec();
        with.push(probes[p]);
        Ok(utility.utility(&with, run_seed)? - utility.utility(base, run_seed)?)
    });

    let mut contributions = vec![vec![0.0; per_size]; probes.len()];
    for (cell, value) in cells.into_iter().enumerate() {
        contributions[cell / per_size][cell % per_size] = value?;
    }
    let mean = (0..per_size)
        .map(|s| stats::mean(&contributions.iter().map(|c| c[s]).collect::<Vec<_>>()))
        .collect();
    Ok(MarginalCurve {
        sizes: spec.sizes.clone(),
        mean,
        probes,
        contributions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSpec {
    pub trials: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Each trial corrupts a uniform share in `[0, max_noisy_fraction]` of its subset.
    pub max_noisy_fraction: f64,
    pub sigma: f64,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec {
            trials: 100,
            min_size: 10,
            max_size: 60,
            max_noisy_fraction: 1.0,
            sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferReport {
    pub utilities_a: Vec<f64>,
    pub utilities_b: Vec<f64>,
    pub spearman: f64,
}

impl TransferReport {
    pub fn from_pairs(utilities_a: Vec<f64>, utilities_b: Vec<f64>) -> Result<TransferReport> {
        const OP: &str = "diagnostics::transfer_report";
        if utilities_a.len() != utilities_b.len() || utilities_a.len() < 10 {
            return Err(Error::invalid_input(
                OP,
                format!("need two equal lists of at least 10, got {} and {}", utilities_a.len(), utilities_b.len()),
            ));
        }
        let spearman = stats::spearman(&utilities_a, &utilities_b)
            .ok_or_else(|| Error::invalid_input(OP, "utilities are constant on one side; rank correlation undefined"))?;
        Ok(TransferReport {
            utilities_a,
            utilities_b,
            spearman,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let header = vec!["trial".to_string(), "utility_a".to_string(), "utility_b".to_string()];
        let rows = self
            .utilities_a
            .iter()
            .zip(&self.utilities_b)
            .enumerate()
            .map(|(t, (a, b))| vec![t.to_string(), a.to_string(), b.to_string()]);
        write_rows(out, header, rows)
    }
}

/// Per trial: draw a random subset of `train`, add Gaussian noise to a random
/// share of it, train both proxies from the same seed and score on `val`.
#[allow(clippy::too_many_arguments)]
pub fn transfer_report(
    train: &Dataset,
    val: &Dataset,
    spec_a: &ProxySpec,
    spec_b: &ProxySpec,
    metric: MetricSpec,
    transfer: &TransferSpec,
    seed: u64,
    workers: usize,
) -> Result<TransferReport> {
    const OP: &str = "diagnostics::transfer_report";
    if transfer.trials < 10 {
        return Err(Error::invalid_spec(OP, format!("need at least 10 trials, got {}", transfer.trials)));
    }
    if transfer.min_size == 0 || transfer.min_size > transfer.max_size || transfer.max_size > train.len() {
        return Err(Error::invalid_spec(
            OP,
            format!("subset sizes [{}, {}] must lie in [1, {}]", transfer.min_size, transfer.max_size, train.len()),
        ));
    }
    if !(0.0..=1.0).contains(&transfer.max_noisy_fraction) {
        return Err(Error::invalid_spec(OP, "noisy fraction must lie in [0, 1]"));
    }
    let pairs = par::map_indexed(transfer.trials, workers, |t| -> Result<(f64, f64)> {
        let mut rng = seed::rng(seed::derive(seed, &[t as u64]));
        let size = rng.random_range(transfer.min_size..=transfer.max_size);
        let rows = rand::seq::index::sample(&mut rng, train.len(), size).into_vec();
        let fraction = rng.random::<f64>() * transfer.max_noisy_fraction;
        let level = NoiseLevel {
            fraction,
            sigma: transfer.sigma,
        };
        let local = inject_noise(&train.subset(&rows)?, &[level], seed::derive(seed, &[t as u64, 1]))?;
        let all: Vec<usize> = (0..size).collect();
        let run_seed = seed::derive(seed, &[t as u64, 2]);
        Ok((
            train_and_score(&all, &local, val, spec_a, metric, run_seed)?,
            train_and_score(&all, &local, val, spec_b, metric, run_seed)?,
        ))
    });
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    TransferReport::from_pairs(a, b)
}

/// A clean pool point and noisy copies of it at increasing σ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub clean: usize,
    pub variants: Vec<usize>,
}

/// Rows `[clean, clean + N(0, σ₁²), clean + N(0, σ₂²), …]` for every row of
/// `sources`, plus the groups addressing them from `offset` on.
pub fn plant_variants(
    sources: &Dataset,
    sigmas: &[f64],
    offset: usize,
    seed: u64,
) -> Result<(Dataset, Vec<PlantedGroup>)> {
    const OP: &str = "diagnostics::plant_variants";
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid_spec(OP, "sigmas must be finite and non-negative"));
    }
    let labels = sources.require_labels(OP)?;
    let width = 1 + sigmas.len();
    let mut rng = seed::rng(seed);
    let mut features = Array2::zeros((sources.len() * width, sources.dim()));
    let mut out_labels = Vec::with_capacity(sources.len() * width);
    let mut noise = Vec::with_capacity(sources.len() * width);
    let mut groups = Vec::with_capacity(sources.len());
    for (g, row) in sources.features().outer_iter().enumerate() {
        let base = g * width;
        for (v, sigma) in std::iter::once(0.0).chain(sigmas.iter().copied()).enumerate() {
            let mut out = features.row_mut(base + v);
            for (o, x) in out.iter_mut().zip(row) {
                let z: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                *o = x + sigma * z;
            }
            out_labels.push(labels[g]);
            noise.push(sigma);
        }
        groups.push(PlantedGroup {
            clean: offset + base,
            variants: (1..width).map(|v| offset + base + v).collect(),
        });
    }
    let mut planted = Dataset::new(features, Some(out_labels), sources.class_count(), "planted")?;
    planted.set_features(planted.features().to_owned(), noise);
    Ok((planted, groups))
}

/// 1-based pick ranks per planted group; `None` when unselected.
#[derive(Clone, Debug, PartialEq)]
pub struct RankTable {
    pub budget: usize,
    pub groups: Vec<PlantedGroup>,
    /// `ranks[g][0]` is the clean point, `ranks[g][v]` variant `v`.
    pub ranks: Vec<Vec<Option<usize>>>,
}

impl RankTable {
    /// Mean rank at one position in the groups, counting unselected as `M + 1`.
    pub fn mean_rank(&self, level: usize) -> f64 {
        let values: Vec<f64> = self
            .ranks
            .iter()
            .map(|r| r[level].unwrap_or(self.budget + 1) as f64)
            .collect();
        stats::mean(&values)
    }

    pub fn write_csv<W: Write>(&self, out: W, sigmas: &[f64]) -> Result<()> {
        let mut header = vec!["group".to_string(), "clean_index".to_string(), "rank_clean".to_string()];
        header.extend(sigmas.iter().map(|s| format!("rank_sigma_{s}")));
        let rows = self.groups.iter().zip(&self.ranks).enumerate().map(|(g, (group, ranks))| {
            let mut row = vec![g.to_string(), group.clean.to_string()];
            row.extend(ranks.iter().map(|r| r.map_or("unselected".to_string(), |v| v.to_string())));
            row
        });
        write_rows(out, header, rows)
    }
}

pub fn rank_analysis(selection: &SelectionResult, pool_len: usize, groups: &[PlantedGroup]) -> Result<RankTable> {
    const OP: &str = "diagnostics::rank_analysis";
    let mut rank_of = vec![None; pool_len];
    for (order, pick) in selection.picks.iter().enumerate() {
        if pick.pool_index >= pool_len {
            return Err(Error::invalid_input(OP, format!("selected index {} outside pool of {pool_len}", pick.pool_index)));
        }
        rank_of[pick.pool_index] = Some(order + 1);
    }
    let mut ranks = Vec::with_capacity(groups.len());
    for group in groups {
        let mut row = Vec::with_capacity(1 + group.variants.len());
        for &i in std::iter::once(&group.clean).chain(&group.variants) {
            if i >= pool_len {
                return Err(Error::invalid_input(OP, format!("planted index {i} outside pool of {pool_len}")));
            }
            row.push(rank_of[i]);
        }
        ranks.push(row);
    }
    Ok(RankTable {
        budget: selection.len(),
        groups: groups.to_vec(),
        ranks,
    })
}

fn write_rows<W: Write>(out: W, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let fail = |e: csv::Error| Error::invalid_input("diagnostics::write_csv", e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::invalid_input("diagnostics::write_csv", e.to_string()))
}

pub fn save_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io("diagnostics::save", path, e))
}
