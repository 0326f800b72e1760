//! Classifier training: the trusted-data robust method and the baselines.
//!
//! Every method trains the same architecture on the same untrusted samples
//! and sees only their given labels. The robust method additionally sees the
//! labels inferred by an [`ExpertNetPair`](crate::expertnet::ExpertNetPair);
//! forward correction additionally sees a transition matrix.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EnrichedDataset, LabelKind};
use crate::error::{validation, Error, Result};
use crate::losses::{
    batch_lids, entropy, AlphaState, AlphaTrace, BootstrapLoss, CrossEntropy, D2lLoss, D2lState, ForwardLoss,
    RobustLoss, SymmetricCe,
};
use crate::nn::{evaluate, init_network, Activation, LossContract, Network, OutputHead, Sgd, TrainConfig};
use crate::noise::TransitionMatrix;
use crate::rng::{derive_seed, rng_from, Tag};

/// Training methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Trustnet,
    Ce,
    Scl,
    D2l,
    Forward,
    Bootstrap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Trustnet,
        Method::Ce,
        Method::Scl,
        Method::D2l,
        Method::Forward,
        Method::Bootstrap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trustnet => "trustnet",
            Method::Ce => "ce",
            Method::Scl => "scl",
            Method::D2l => "d2l",
            Method::Forward => "forward",
            Method::Bootstrap => "bootstrap",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Architecture and optimizer of the trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// ReLU hidden widths; empty means softmax regression.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            train: TrainConfig {
                epochs: 100,
                learning_rate: 0.1,
                ..TrainConfig::default()
            },
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(validation("hidden widths must be positive"));
        }
        self.train.validate()
    }

    fn build(&self, d: usize, c: usize, seed: u64) -> Result<Network> {
        let mut sizes = vec![d];
        sizes.extend(&self.hidden);
        sizes.push(c);
        init_network(
            &sizes,
            &vec![Activation::Relu; self.hidden.len()],
            OutputHead::Softmax,
            derive_seed(seed, &[Tag::Str("init")]),
        )
    }
}

/// Hyperparameters of the baseline losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub scl_a: f64,
    pub scl_b: f64,
    pub bootstrap_alpha: f64,
    /// Neighbours per LID estimate.
    pub d2l_k: usize,
    /// Minibatches averaged for each epoch's LID estimate.
    pub d2l_lid_batches: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            scl_a: 0.1,
            scl_b: 1.0,
            bootstrap_alpha: 0.95,
            d2l_k: 20,
            d2l_lid_batches: 10,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scl_a >= 0.0 && self.scl_b >= 0.0) {
            return Err(validation("SCL weights must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.bootstrap_alpha) {
            return Err(validation("bootstrap_alpha must lie in [0, 1]"));
        }
        if self.d2l_k < 2 || self.d2l_lid_batches == 0 {
            return Err(validation("d2l_k must be >= 2 and d2l_lid_batches positive"));
        }
        Ok(())
    }
}

/// What happened in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean weight on the given label during the epoch (robust method and D2L).
    pub mean_alpha: Option<f64>,
    /// Mean normalized prediction entropy on the training set after the epoch.
    pub mean_entropy: Option<f64>,
    pub clean_acc: Option<f64>,
    pub noisy_acc: Option<f64>,
}

/// A trained classifier with its history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
    pub alpha_trace: Option<AlphaTrace>,
}

/// Accuracy of `net` on a held-out set against given labels and, when
/// present, true labels.
pub fn test_accuracy(net: &Network, test: &Dataset) -> Result<(Option<f64>, f64)> {
    let noisy = evaluate(net, test, LabelKind::Given)?;
    let clean = if test.has_true_labels() {
        Some(evaluate(net, test, LabelKind::True)?)
    } else {
        None
    };
    Ok((clean, noisy))
}

fn row_entropies(net: &Network, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let probs = crate::nn::forward_all(net, x)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|r| entropy(r.as_slice().expect("standard layout"), true))
        .collect())
}

/// Shared epoch loop. `loss_for` builds the loss used during an epoch;
/// `after` runs once the epoch's updates are done.
fn fit<L, A>(
    net: &mut Network,
    x: ArrayView2<'_, f64>,
    train: &TrainConfig,
    seed: u64,
    test: Option<&Dataset>,
    mut loss_for: L,
    mut after: A,
) -> Result<Vec<EpochMetrics>>
where
    L: FnMut(usize, &Network) -> Result<(Box<dyn LossContract>, Option<f64>)>,
    A: FnMut(&Network, &mut EpochMetrics) -> Result<()>,
{
    let mut opt = Sgd::new(net, train.clone())?;
    let mut rng = rng_from(derive_seed(seed, &[Tag::Str("order")]));
    let mut metrics = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let (loss, mean_alpha) = loss_for(epoch, net)?;
        let train_loss = opt.run_epoch(net, x, loss.as_ref(), &mut rng)?;
        opt.next_epoch();
        let mut m = EpochMetrics {
            epoch,
            train_loss,
            mean_alpha,
            mean_entropy: None,
            clean_acc: None,
            noisy_acc: None,
        };
        after(net, &mut m)?;
        if let Some(test) = test {
            let (clean, noisy) = test_accuracy(net, test)?;
            m.clean_acc = clean;
            m.noisy_acc = Some(noisy);
        }
        metrics.push(m);
    }
    Ok(metrics)
}

/// Trains on the enriched set with the per-sample robust loss.
///
/// Weights on the given label start at the normalized entropy of each
/// inferred distribution and are updated after every epoch from the change
/// in the model's own normalized prediction entropy. `test`, if given, is
/// scored after every epoch. With `trace` the weights are kept per epoch.
pub fn train_trustnet(
    enriched: &EnrichedDataset,
    cfg: &ClassifierConfig,
    seed: u64,
    test: Option<&Dataset>,
    trace: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if enriched.is_empty() {
        return Err(validation("cannot train on an empty dataset"));
    }
    let mut net = cfg.build(enriched.dim(), enriched.num_classes(), seed)?;
    let mut state = AlphaState::new(enriched.inferred_probs());
    let mut alpha_trace = trace.then(AlphaTrace::default);
    if let Some(t) = alpha_trace.as_mut() {
        t.record(&state);
    }
    let given = enriched.given_labels().to_vec();
    let inferred = enriched.inferred_labels().to_vec();
    let x = enriched.features();
    let state_cell = std::cell::RefCell::new(&mut state);
    let metrics = fit(
        &mut net,
        x,
        &cfg.train,
        seed,
        test,
        |_, _| {
            let st = state_cell.borrow();
            let loss = RobustLoss {
                given: given.clone(),
                inferred: inferred.clone(),
                alphas: st.alphas().to_vec(),
            };
            Ok((Box::new(loss) as Box<dyn LossContract>, Some(st.mean_alpha())))
        },
        |net, m| {
            let ent = row_entropies(net, x)?;
            m.mean_entropy = Some(ent.iter().sum::<f64>() / ent.len() as f64);
            let mut st = state_cell.borrow_mut();
            st.update(&ent)?;
            if let Some(t) = alpha_trace.as_mut() {
                t.record(&st);
            }
            Ok(())
        },
    )?;
    Ok(TrainOutcome {
        network: net,
        metrics,
        alpha_trace,
    })
}

/// Mean LID of the representation over a few random minibatches.
fn mean_lid(net: &Network, x: ArrayView2<'_, f64>, state: &D2lState, batch: usize, batches: usize, seed: u64) -> Result<f64> {
    let n = x.nrows();
    let batch = batch.min(n);
    if batch <= state.k() {
        return Err(validation(format!(
            "LID needs minibatches larger than k={}, got {batch}",
            state.k()
        )));
    }
    let mut rng = rng_from(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..batches {
        let idx = sample(&mut rng, n, batch).into_vec();
        let xb = x.select(Axis(0), &idx);
        let trace = net.forward_trace(xb.view())?;
        let lids = batch_lids(trace.representation(), state.k(), state.cap())?;
        total += lids.iter().sum::<f64>();
        count += lids.len();
    }
    Ok(total / count as f64)
}

/// Trains a baseline on the given labels of `train`.
///
/// `transition` is required by forward correction and ignored otherwise.
pub fn train_baseline(
    method: Method,
    train: &Dataset,
    cfg: &ClassifierConfig,
    baselines: &BaselineConfig,
    transition: Option<&TransitionMatrix>,
    seed: u64,
    test: Option<&Dataset>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    baselines.validate()?;
    if train.is_empty() {
        return Err(validation("cannot train on an empty dataset"));
    }
    let labels = train.given_labels().to_vec();
    let c = train.num_classes();
    let x = train.features();
    let mut net = cfg.build(train.dim(), c, seed)?;
    let no_after = |_: &Network, _: &mut EpochMetrics| Ok(());
    let metrics = match method {
        Method::Trustnet => {
            return Err(validation("the robust method trains from an enriched dataset"));
        }
        Method::Ce => {
            let loss = CrossEntropy { labels };
            fit(&mut net, x, &cfg.train, seed, test, |_, _| Ok((Box::new(loss.clone()) as _, None)), no_after)?
        }
        Method::Scl => {
            let loss = SymmetricCe {
                labels,
                a: baselines.scl_a,
                b: baselines.scl_b,
            };
            fit(&mut net, x, &cfg.train, seed, test, |_, _| Ok((Box::new(loss.clone()) as _, None)), no_after)?
        }
        Method::Bootstrap => {
            let loss = BootstrapLoss {
                labels,
                alpha: baselines.bootstrap_alpha,
            };
            fit(&mut net, x, &cfg.train, seed, test, |_, _| Ok((Box::new(loss.clone()) as _, None)), no_after)?
        }
        Method::Forward => {
            let t = transition.ok_or_else(|| validation("forward correction needs a transition matrix"))?;
            if t.num_classes() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    found: t.num_classes(),
                });
            }
            let loss = ForwardLoss {
                labels,
                transition: t.clone(),
            };
            fit(&mut net, x, &cfg.train, seed, test, |_, _| Ok((Box::new(loss.clone()) as _, None)), no_after)?
        }
        Method::D2l => {
            let mut state = D2lState::new(cfg.train.epochs, baselines.d2l_k)?;
            let lid_seed = derive_seed(seed, &[Tag::Str("lid")]);
            fit(
                &mut net,
                x,
                &cfg.train,
                seed,
                test,
                |epoch, net| {
                    let lid = mean_lid(
                        net,
                        x,
                        &state,
                        cfg.train.batch_size,
                        baselines.d2l_lid_batches,
                        derive_seed(lid_seed, &[Tag::U64(epoch as u64)]),
                    )?;
                    let alpha = state.record(lid)?;
                    let loss = D2lLoss {
                        labels: labels.clone(),
                        alpha,
                    };
                    Ok((Box::new(loss) as _, Some(alpha)))
                },
                no_after,
            )?
        }
    };
    Ok(TrainOutcome {
        network: net,
        metrics,
        alpha_trace: None,
    })
}
