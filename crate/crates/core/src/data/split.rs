use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Pool};
use crate::error::{Error, Result};
use crate::seed;

/// Sizes of the labeled training split, labeled validation split and
/// unlabeled pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub pool: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// Divide `labeled` points into train/validation by `ratio` (the training
    /// share, rounded to nearest).
    pub fn from_ratio(labeled: usize, ratio: f64, pool: usize, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid_spec("data::split", format!("ratio {ratio} outside (0, 1)")));
        }
        let train = (labeled as f64 * ratio).round() as usize;
        Ok(SplitSpec {
            train,
            val: labeled - train,
            pool,
            seed,
        })
    }

    pub fn validate(&self, available: usize) -> Result<()> {
        const OP: &str = "data::split";
        if self.train == 0 || self.val == 0 || self.pool == 0 {
            return Err(Error::invalid_spec(OP, "split sizes must be positive"));
        }
        let total = self.train + self.val + self.pool;
        if total > available {
            return Err(Error::invalid_spec(
                OP,
                format!("split needs {total} rows, dataset has {available}"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub pool: Pool,
    /// Source-row indices of train, val and pool, in split order.
    pub indices: [Vec<usize>; 3],
}

/// Disjoint random train/validation/pool split; the pool's labels are hidden.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate(dataset.len())?;
    dataset.require_labels("data::split")?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed::rng(spec.seed));
    let train_idx = order[..spec.train].to_vec();
    let val_idx = order[spec.train..spec.train + spec.val].to_vec();
    let pool_idx = order[spec.train + spec.val..spec.train + spec.val + spec.pool].to_vec();
    Ok(Splits {
        train: dataset.subset(&train_idx)?,
        val: dataset.subset(&val_idx)?,
        pool: Pool::hide(dataset.subset(&pool_idx)?),
        indices: [train_idx, val_idx, pool_idx],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use std::collections::HashSet;

    #[test]
    fn ten_points_four_two_four() {
        let ds = make_blobs(10, 2, 2, 3.0, 0).unwrap();
        let spec = SplitSpec { train: 4, val: 2, pool: 4, seed: 1 };
        let s = split(&ds, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.pool.len()), (4, 2, 4));
        let all: HashSet<usize> = s.indices.iter().flatten().copied().collect();
        assert_eq!(all.len(), 10);
        assert!(s.pool.labels().is_err());
        let again = split(&ds, &spec).unwrap();
        assert_eq!(again.indices, s.indices);
    }

    #[test]
    fn infeasible_sizes_rejected() {
        let ds = make_blobs(10, 2, 2, 3.0, 0).unwrap();
        let spec = SplitSpec { train: 5, val: 3, pool: 3, seed: 1 };
        assert!(matches!(split(&ds, &spec), Err(Error::InvalidSpec { .. })));
    }

    #[test]
    fn ratio_drives_train_share() {
        let spec = SplitSpec::from_ratio(600, 0.5, 2000, 0).unwrap();
        assert_eq!((spec.train, spec.val, spec.pool), (300, 300, 2000));
        assert!(SplitSpec::from_ratio(10, 1.0, 1, 0).is_err());
    }
}
