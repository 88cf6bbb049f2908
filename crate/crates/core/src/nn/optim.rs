use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..OptimizerConfig::sgd(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid_spec(
                "nn::optimizer",
                format!("learning rate must be positive, got {}", self.learning_rate),
            ));
        }
        if self.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2))
        {
            return Err(Error::invalid_spec("nn::optimizer", "adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Optimizer bookkeeping. Moment buffers exist only for Adam.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    first: Option<Vec<Moments>>,
    second: Option<Vec<Moments>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, net: &DenseNet) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| Moments {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        let (first, second) = match config.kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::Adam => (Some(zeros()), Some(zeros())),
        };
        OptimizerState {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn has_moments(&self) -> bool {
        self.first.is_some()
    }

    /// Apply one update in place. A non-finite gradient leaves `net` untouched.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        const OP: &str = "nn::step";
        if grads.layers.len() != net.layers().len() {
            return Err(Error::DimensionMismatch {
                op: OP,
                expected: net.layers().len(),
                got: grads.layers.len(),
            });
        }
        for (i, (g, l)) in grads.layers.iter().zip(net.layers()).enumerate() {
            if g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len() {
                return Err(Error::DimensionMismatch {
                    op: OP,
                    expected: l.weights.len(),
                    got: g.weights.len(),
                });
            }
            if g.weights.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { op: OP, layer: i });
            }
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        match (&mut self.first, &mut self.second) {
            (Some(first), Some(second)) => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (((layer, g), m), v) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(first.iter_mut())
                    .zip(second.iter_mut())
                {
                    Zip::from(&mut layer.weights)
                        .and(&g.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut layer.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
            _ => {
                for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add(-lr, &g.weights);
                    layer.bias.scaled_add(-lr, &g.bias);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, LayerGrad};
    use ndarray::array;

    fn scalar_net(p: f64) -> DenseNet {
        DenseNet::new(vec![Layer {
            weights: array![[p]],
            bias: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![LayerGrad {
                weights: array![[g]],
                bias: array![0.0],
            }],
        }
    }

    #[test]
    fn sgd_step() {
        let mut net = scalar_net(1.0);
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.1), &net);
        state.step(&mut net, &scalar_grad(2.0)).unwrap();
        assert!((net.layers()[0].weights[[0, 0]] - 0.8).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
        assert!(!state.has_moments());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+eps).
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let mut net = scalar_net(1.0);
            let mut state = OptimizerState::new(OptimizerConfig::adam(1e-3), &net);
            state.step(&mut net, &scalar_grad(g)).unwrap();
            let moved = 1.0 - net.layers()[0].weights[[0, 0]];
            let expected = 1e-3 * g / (g.abs() + 1e-8);
            assert!((moved - expected).abs() < 1e-15, "g={g}: {moved} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for config in [OptimizerConfig::sgd(0.5), OptimizerConfig::adam(0.5)] {
            let mut net = scalar_net(3.0);
            let mut state = OptimizerState::new(config, &net);
            state.step(&mut net, &scalar_grad(0.0)).unwrap();
            assert_eq!(net.layers()[0].weights[[0, 0]], 3.0);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = scalar_net(1.0);
        let mut state = OptimizerState::new(OptimizerConfig::adam(0.1), &net);
        let err = state.step(&mut net, &scalar_grad(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 0, .. }));
        assert_eq!(net.layers()[0].weights[[0, 0]], 1.0);
        assert_eq!(state.step_count(), 0);
    }
}
