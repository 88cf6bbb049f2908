use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DenseNet, Loss, OptimizerConfig, OptimizerState, Targets};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Mini-batch training, reshuffling every epoch with `rng`. Returns the mean
/// loss of each epoch.
pub fn train(
    net: &mut DenseNet,
    features: ArrayView2<f64>,
    targets: Targets<'_>,
    loss: Loss,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    const OP: &str = "nn::train";
    let n = features.nrows();
    if n == 0 {
        return Err(Error::invalid_input(OP, "empty dataset"));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::invalid_spec(OP, "epochs and batch size must be at least 1"));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            op: OP,
            expected: n,
            got: targets.len(),
        });
    }
    config.optimizer.validate()?;

    let mut state = OptimizerState::new(config.optimizer, net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = features.select(Axis(0), chunk);
            let (value, grads) = match targets {
                Targets::Classes(classes) => {
                    let picked: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
                    net.backward(batch.view(), Targets::Classes(&picked), loss)?
                }
                Targets::Values(values) => {
                    let picked = values.select(Axis(0), chunk);
                    net.backward(batch.view(), Targets::Values(picked.view()), loss)?
                }
            };
            state.step(net, &grads)?;
            total += value * chunk.len() as f64;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(epoch_losses)
}
