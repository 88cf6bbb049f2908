//! Minimal dense networks with explicit forward and backward passes.
//!
//! This is just enough machinery for logistic regression, small MLP
//! classifiers and the two halves of the set-utility model. All arithmetic is
//! `f64`.

mod io;
mod optim;
mod train;

pub use io::{load_net, read_net, save_net, write_net, WEIGHT_FORMAT_VERSION};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use train::{train, TrainConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One fully connected layer; `weights` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

/// Training targets. Class targets pair with softmax cross-entropy, real
/// targets with mean squared error.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    Values(ArrayView2<'a, f64>),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of the loss with respect to every parameter, shaped like the net.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }
}

/// Activations recorded by [`DenseNet::forward_trace`]: `activations[0]` is the
/// input batch, `activations[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct Trace {
    pub activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds at least the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        const OP: &str = "nn::new";
        if layers.is_empty() {
            return Err(Error::invalid_input(OP, "a net needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionMismatch {
                    op: OP,
                    expected: layer.output_dim(),
                    got: layer.bias.len(),
                });
            }
            if layer.input_dim() == 0 || layer.output_dim() == 0 {
                return Err(Error::invalid_input(OP, format!("layer {i} has a zero dimension")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.input_dim() != layer.output_dim() {
                    return Err(Error::DimensionMismatch {
                        op: OP,
                        expected: layer.output_dim(),
                        got: next.input_dim(),
                    });
                }
            }
        }
        Ok(DenseNet { layers })
    }

    /// Glorot-uniform weights and zero biases. `sizes` lists the layer widths
    /// from input to output; the last layer is linear.
    pub fn random(sizes: &[usize], hidden: Activation, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid_input(
                "nn::random",
                "need an input and an output width",
            ));
        }
        let depth = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == depth {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        DenseNet::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Direct parameter access. Shapes must not be changed.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, op: &'static str, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.input_dim(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    fn apply_layer(layer: &Layer, input: &ArrayView2<f64>, index: usize) -> Result<Array2<f64>> {
        let mut z = input.dot(&layer.weights.t());
        z += &layer.bias;
        if layer.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow {
                op: "nn::forward",
                layer: index,
            });
        }
        Ok(z)
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input("nn::forward", &batch)?;
        let mut current = Self::apply_layer(&self.layers[0], &batch, 0)?;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            current = Self::apply_layer(layer, &current.view(), i)?;
        }
        Ok(current)
    }

    /// Forward pass that keeps every intermediate activation for backprop.
    pub fn forward_trace(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_input("nn::forward", &batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = Self::apply_layer(layer, &activations[i].view(), i)?;
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Backpropagate `grad_output` (dLoss/dOutput) through a recorded trace.
    /// Returns parameter gradients and dLoss/dInput.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        grad_output: Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = trace.output();
        if grad_output.dim() != out.dim() {
            return Err(Error::DimensionMismatch {
                op: "nn::backward",
                expected: out.ncols(),
                got: grad_output.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                ndarray::Zip::from(&mut g)
                    .and(&trace.activations[i + 1])
                    .for_each(|gv, &a| {
                        if a <= 0.0 {
                            *gv = 0.0;
                        }
                    });
            }
            let input = &trace.activations[i];
            let weights = g.t().dot(input);
            let bias = g.sum_axis(Axis(0));
            let next = g.dot(&layer.weights);
            grads.push(LayerGrad { weights, bias });
            g = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }

    /// Mean loss over the batch and its exact gradient.
    pub fn backward(
        &self,
        batch: ArrayView2<f64>,
        targets: Targets<'_>,
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        if targets.len() != batch.nrows() {
            return Err(Error::DimensionMismatch {
                op: "nn::backward",
                expected: batch.nrows(),
                got: targets.len(),
            });
        }
        let trace = self.forward_trace(batch)?;
        let (value, grad) = loss_and_grad(trace.output(), targets, loss)?;
        let (grads, _) = self.backward_trace(&trace, grad)?;
        Ok((value, grads))
    }
}

/// Mean loss over rows of `output` plus dLoss/dOutput.
pub fn loss_and_grad(
    output: &Array2<f64>,
    targets: Targets<'_>,
    loss: Loss,
) -> Result<(f64, Array2<f64>)> {
    const OP: &str = "nn::loss";
    let n = output.nrows();
    if n == 0 {
        return Err(Error::invalid_input(OP, "empty batch"));
    }
    let inv_n = 1.0 / n as f64;
    match (loss, targets) {
        (Loss::SoftmaxCrossEntropy, Targets::Classes(classes)) => {
            let k = output.ncols();
            let mut grad = Array2::zeros(output.raw_dim());
            let mut total = 0.0;
            for (i, row) in output.outer_iter().enumerate() {
                let y = classes[i];
                if y >= k {
                    return Err(Error::invalid_input(
                        OP,
                        format!("class target {y} outside [0, {k})"),
                    ));
                }
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                total += lse - row[y];
                for (j, &v) in row.iter().enumerate() {
                    grad[[i, j]] = ((v - lse).exp() - if j == y { 1.0 } else { 0.0 }) * inv_n;
                }
            }
            Ok((total * inv_n, grad))
        }
        (Loss::MeanSquaredError, Targets::Values(values)) => {
            if values.dim() != output.dim() {
                return Err(Error::DimensionMismatch {
                    op: OP,
                    expected: output.ncols(),
                    got: values.ncols(),
                });
            }
            let diff = output - &values;
            let total = diff.iter().map(|d| d * d).sum::<f64>() * inv_n;
            Ok((total, diff * (2.0 * inv_n)))
        }
        (Loss::SoftmaxCrossEntropy, Targets::Values(_)) => Err(Error::invalid_input(
            OP,
            "softmax cross-entropy needs integer class targets",
        )),
        (Loss::MeanSquaredError, Targets::Classes(_)) => Err(Error::invalid_input(
            OP,
            "mean squared error needs real-valued targets",
        )),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}
