use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LossContract, Network};
use crate::data::{argmax, Dataset, LabelKind};
use crate::error::{validation, Error, Result};

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Divide the rate by 10 every `every` epochs.
    StepDecay { every: usize },
}

/// Minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(validation("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(validation("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(validation(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(validation(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(validation(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if let LrSchedule::StepDecay { every: 0 } = self.schedule {
            return Err(validation("step decay interval must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::StepDecay { every } => self.learning_rate * 0.1f64.powi((epoch / every) as i32),
        }
    }
}

/// Momentum SGD state for one network.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: TrainConfig,
    weight_velocity: Vec<Array2<f64>>,
    bias_velocity: Vec<Array1<f64>>,
    epoch: usize,
    step: usize,
    lr: f64,
}

impl Sgd {
    /// The learning rate may be zero here, which freezes the parameters.
    pub fn new(net: &Network, config: TrainConfig) -> Result<Self> {
        if config.learning_rate != 0.0 {
            config.validate()?;
        }
        let weight_velocity = net.layers().iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect();
        let bias_velocity = net.layers().iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect();
        let lr = config.learning_rate_at(0);
        Ok(Self {
            config,
            weight_velocity,
            bias_velocity,
            epoch: 0,
            step: 0,
            lr,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Moves to the next epoch and applies the schedule.
    pub fn next_epoch(&mut self) {
        self.epoch += 1;
        self.lr = self.config.learning_rate_at(self.epoch);
    }

    fn divergence(&self, detail: impl Into<String>) -> Error {
        Error::Divergence {
            epoch: self.epoch,
            step: self.step,
            detail: detail.into(),
        }
    }

    /// One update on the rows `x` whose dataset indices are `samples`.
    pub fn step(&mut self, net: &mut Network, x: ArrayView2<'_, f64>, samples: &[usize], loss: &dyn LossContract) -> Result<f64> {
        if x.nrows() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: samples.len(),
            });
        }
        if !net.is_finite() {
            return Err(self.divergence("parameters are not finite before the step"));
        }
        let trace = net.forward_trace(x)?;
        let (value, dprobs) = loss.loss_and_grad(trace.probs.view(), samples);
        if dprobs.dim() != trace.probs.dim() {
            return Err(Error::DimensionMismatch {
                expected: trace.probs.ncols(),
                found: dprobs.ncols(),
            });
        }
        if !value.is_finite() {
            return Err(self.divergence(format!("loss is {value}")));
        }
        if dprobs.iter().any(|v| !v.is_finite()) {
            return Err(self.divergence("loss gradient is not finite"));
        }
        let grads = net.backward(&trace, dprobs.view());
        if grads.weights.iter().flatten().chain(grads.biases.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(self.divergence("parameter gradient is not finite"));
        }
        let (lr, mu, wd) = (self.lr, self.config.momentum, self.config.weight_decay);
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let vw = &mut self.weight_velocity[l];
            ndarray::Zip::from(&mut *vw)
                .and(&grads.weights[l])
                .and(&layer.weights)
                .for_each(|v, &g, &w| *v = mu * *v + g + wd * w);
            layer.weights.scaled_add(-lr, vw);
            let vb = &mut self.bias_velocity[l];
            ndarray::Zip::from(&mut *vb).and(&grads.biases[l]).for_each(|v, &g| *v = mu * *v + g);
            layer.bias.scaled_add(-lr, vb);
        }
        self.step += 1;
        Ok(value)
    }

    /// One pass over `features` in shuffled minibatches; returns the mean
    /// batch loss. Call [`Sgd::next_epoch`] afterwards to advance the schedule.
    pub fn run_epoch<R: Rng>(
        &mut self,
        net: &mut Network,
        features: ArrayView2<'_, f64>,
        loss: &dyn LossContract,
        rng: &mut R,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..features.nrows()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let x = features.select(Axis(0), chunk);
            total += self.step(net, x.view(), chunk, loss)?;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }
}

/// Convenience wrapper around [`Sgd::step`].
pub fn train_step(
    net: &mut Network,
    opt: &mut Sgd,
    x: ArrayView2<'_, f64>,
    samples: &[usize],
    loss: &dyn LossContract,
) -> Result<f64> {
    opt.step(net, x, samples, loss)
}

const EVAL_CHUNK: usize = 2048;

/// Probability rows for every row of `x`, computed in chunks.
pub(crate) fn forward_all(net: &Network, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), net.num_outputs()));
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let p = net.forward(x.slice(ndarray::s![start..end, ..]))?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&p);
    }
    Ok(out)
}

/// Argmax class per row, ties to the lower index.
pub fn predict(net: &Network, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let p = forward_all(net, x)?;
    Ok(p.rows().into_iter().map(|r| argmax(r)).collect())
}

/// Fraction of samples whose predicted class equals the selected label.
pub fn evaluate(net: &Network, ds: &Dataset, kind: LabelKind) -> Result<f64> {
    let labels = ds.labels(kind)?;
    if ds.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(net, ds.features())?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / ds.len() as f64)
}
