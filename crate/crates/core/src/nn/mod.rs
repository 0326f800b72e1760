//! A small dense feed-forward network with a probability output head.
//!
//! Losses plug in through [`LossContract`]: they see the output probability
//! rows and return the gradient with respect to those probabilities; the
//! network chains it through the output head and the dense layers.

mod checkpoint;
mod train;

pub use checkpoint::{load_network, parse_network, save_network, write_network};
pub(crate) use train::forward_all;
pub use train::{evaluate, predict, train_step, LrSchedule, Sgd, TrainConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{validation, Error, Result};
use crate::rng::rng_from;

/// Default negative slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Maps the last layer's outputs to a probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Softmax,
    /// Element-wise sigmoid, then divided by the sum.
    NormalizedSigmoid,
}

/// One dense layer. Weights are stored `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Dense layers followed by an output head. The last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
    head: OutputHead,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of every layer; `inputs[0]` is the batch.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every layer; the last one holds the logits.
    pub pre: Vec<Array2<f64>>,
    pub probs: Array2<f64>,
}

impl Trace {
    /// Input of the last layer, i.e. the output of the second-to-last layer.
    pub fn representation(&self) -> ArrayView2<'_, f64> {
        self.inputs[self.inputs.len() - 1].view()
    }
}

/// Per-sample loss on probability rows.
pub trait LossContract {
    /// Mean loss over the batch rows and its gradient with respect to
    /// `probs`. `samples[r]` identifies the dataset sample in row `r`, for
    /// losses that carry per-sample targets or weights.
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>);
}

/// Builds a network with `sizes[0]` inputs and `sizes.last()` outputs.
///
/// `hidden` gives one activation per hidden layer, so
/// `hidden.len() == sizes.len() - 2`. Weights are uniform with fan-in aware
/// limits (He for rectifiers, Glorot otherwise); biases start at zero.
pub fn init_network(sizes: &[usize], hidden: &[Activation], head: OutputHead, seed: u64) -> Result<Network> {
    if sizes.len() < 2 {
        return Err(validation("a network needs at least an input and an output size"));
    }
    if hidden.len() + 2 != sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: sizes.len() - 2,
            found: hidden.len(),
        });
    }
    if sizes.contains(&0) {
        return Err(validation("layer sizes must be positive"));
    }
    let mut rng = rng_from(seed);
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let activation = hidden.get(l).copied().unwrap_or(Activation::Linear);
            let limit = match activation {
                Activation::Relu | Activation::LeakyRelu(_) => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
            Dense {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            }
        })
        .collect();
    Ok(Network { layers, head })
}

impl Network {
    /// Assembles a network from explicit layers.
    pub fn from_layers(layers: Vec<Dense>, head: OutputHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(validation("a network needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(validation(format!(
                    "layer {l} has {} outputs but layer {} expects {} inputs",
                    pair[0].outputs(),
                    l + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(validation(format!("layer {l} bias has the wrong length")));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(validation("the last layer must be linear"));
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Probability rows for a batch.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights) + &layer.bias;
            if layer.activation != Activation::Linear {
                z.mapv_inplace(|v| layer.activation.apply(v));
            }
            a = z;
        }
        Ok(self.apply_head(a))
    }

    /// Forward pass keeping every intermediate needed by [`Network::backward`].
    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let z = a.dot(&layer.weights) + &layer.bias;
            let next = z.mapv(|v| layer.activation.apply(v));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let probs = self.apply_head(a);
        Ok(Trace { inputs, pre, probs })
    }

    fn apply_head(&self, mut z: Array2<f64>) -> Array2<f64> {
        match self.head {
            OutputHead::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let s = row.sum();
                    row /= s;
                }
            }
            OutputHead::NormalizedSigmoid => {
                for mut row in z.rows_mut() {
                    row.mapv_inplace(sigmoid);
                    let s = row.sum().max(f64::MIN_POSITIVE);
                    row /= s;
                }
            }
        }
        z
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the output probabilities.
    pub fn backward(&self, trace: &Trace, dprobs: ArrayView2<'_, f64>) -> Gradients {
        let probs = &trace.probs;
        let logits = &trace.pre[trace.pre.len() - 1];
        // <g, p> per row
        let gp = (&dprobs * probs).sum_axis(Axis(1));
        let mut dz = match self.head {
            OutputHead::Softmax => {
                let mut dz = dprobs.to_owned();
                Zip::from(dz.rows_mut())
                    .and(probs.rows())
                    .and(&gp)
                    .for_each(|mut d, p, &s| {
                        Zip::from(&mut d).and(&p).for_each(|d, &p| *d = p * (*d - s));
                    });
                dz
            }
            OutputHead::NormalizedSigmoid => {
                let mut dz = dprobs.to_owned();
                Zip::from(dz.rows_mut())
                    .and(logits.rows())
                    .and(&gp)
                    .for_each(|mut d, z, &s| {
                        let sig: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                        let total = sig.iter().sum::<f64>().max(f64::MIN_POSITIVE);
                        for (d, sg) in d.iter_mut().zip(&sig) {
                            *d = (*d - s) / total * sg * (1.0 - sg);
                        }
                    });
                dz
            }
        };
        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        for l in (0..n).rev() {
            weights[l] = trace.inputs[l].t().dot(&dz);
            biases[l] = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].weights.t());
                let act = self.layers[l - 1].activation;
                Zip::from(&mut da)
                    .and(&trace.pre[l - 1])
                    .and(&trace.inputs[l])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
                dz = da;
            }
        }
        Gradients { weights, biases }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_validated() {
        let a = init_network(&[3, 5, 2], &[Activation::Relu], OutputHead::Softmax, 4).unwrap();
        let b = init_network(&[3, 5, 2], &[Activation::Relu], OutputHead::Softmax, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        let softmax_regression = init_network(&[3, 4], &[], OutputHead::Softmax, 1).unwrap();
        assert_eq!(softmax_regression.layers().len(), 1);
        assert!(init_network(&[3, 5, 2], &[], OutputHead::Softmax, 4).is_err());
        assert!(init_network(&[3], &[], OutputHead::Softmax, 4).is_err());
        assert!(init_network(&[3, 0, 2], &[Activation::Relu], OutputHead::Softmax, 4).is_err());
    }

    #[test]
    fn forward_outputs_distributions() {
        let net = init_network(&[4, 8, 8, 3], &[Activation::Relu, Activation::Sigmoid], OutputHead::Softmax, 2).unwrap();
        let x = Array2::from_shape_fn((32, 4), |(i, j)| (i as f64 - 3.0 * j as f64) * 0.1);
        let p = net.forward(x.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        // batching does not change a row
        for k in [0, 7, 31] {
            let single = net.forward(x.slice(ndarray::s![k..k + 1, ..])).unwrap();
            for j in 0..3 {
                assert!((single[[0, j]] - p[[k, j]]).abs() < 1e-9);
            }
        }
        assert!(net.forward(Array2::zeros((2, 5)).view()).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let mut net = init_network(&[3, 4, 5], &[Activation::Relu], OutputHead::Softmax, 0).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(0.0);
        }
        let p = net.forward(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn from_layers_checks_chain() {
        let l1 = Dense {
            weights: Array2::zeros((2, 3)),
            bias: Array1::zeros(3),
            activation: Activation::Relu,
        };
        let l2 = Dense {
            weights: Array2::zeros((4, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Linear,
        };
        assert!(Network::from_layers(vec![l1.clone(), l2], OutputHead::Softmax).is_err());
        let l2 = Dense {
            weights: Array2::zeros((3, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Linear,
        };
        assert!(Network::from_layers(vec![l1, l2], OutputHead::Softmax).is_ok());
    }
}
