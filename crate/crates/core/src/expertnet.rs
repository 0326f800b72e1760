//! The Amateur/Expert pair trained on the trusted split, and enrichment of
//! untrusted samples with the labels it infers.
//!
//! The Amateur maps features to class probabilities. The Expert maps the
//! Amateur's probabilities concatenated with the one-hot given label to an
//! estimate of the true label. Training alternates per minibatch: the Expert
//! fits the true labels, then the Amateur fits the Expert's soft output.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EnrichedDataset, TrustedSet};
use crate::error::{Error, Result};
use crate::losses::{CrossEntropy, SoftCrossEntropy};
use crate::nn::{init_network, Activation, Network, OutputHead, Sgd, TrainConfig, LEAKY_SLOPE};
use crate::rng::{derive_seed, rng_from, Tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertNetConfig {
    /// Hidden widths of the Amateur (ReLU).
    pub amateur_hidden: Vec<usize>,
    /// Width of the Expert's three hidden layers.
    pub expert_width: usize,
    pub train: TrainConfig,
}

impl Default for ExpertNetConfig {
    fn default() -> Self {
        Self {
            amateur_hidden: vec![64],
            expert_width: 64,
            train: TrainConfig {
                epochs: 60,
                batch_size: 64,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExpertNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.expert_width == 0 || self.amateur_hidden.contains(&0) {
            return Err(crate::error::validation("layer widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertNetPair {
    pub amateur: Network,
    pub expert: Network,
}

/// Rows of `<p, onehot(y)>`.
fn expert_input(amateur_probs: ArrayView2<'_, f64>, given: &[usize]) -> Array2<f64> {
    let c = amateur_probs.ncols();
    let mut onehot = Array2::zeros((given.len(), c));
    for (r, &y) in given.iter().enumerate() {
        onehot[[r, y]] = 1.0;
    }
    concatenate![Axis(1), amateur_probs, onehot]
}

impl ExpertNetPair {
    pub fn num_classes(&self) -> usize {
        self.amateur.num_outputs()
    }

    /// Expert's distribution over true labels for features with given labels.
    pub fn infer(&self, features: ArrayView2<'_, f64>, given: &[usize]) -> Result<Array2<f64>> {
        if features.nrows() != given.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: given.len(),
            });
        }
        let c = self.num_classes();
        if let Some(&bad) = given.iter().find(|&&y| y >= c) {
            return Err(crate::error::validation(format!("given label {bad} not below {c}")));
        }
        let mut out = Array2::zeros((given.len(), c));
        const CHUNK: usize = 2048;
        for start in (0..given.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(given.len());
            let pa = self.amateur.forward(features.slice(s![start..end, ..]))?;
            let input = expert_input(pa.view(), &given[start..end]);
            out.slice_mut(s![start..end, ..]).assign(&self.expert.forward(input.view())?);
        }
        Ok(out)
    }
}

/// Trains the pair on the trusted split. This is the only place the true
/// labels of the training data are read.
pub fn train_expertnet(trusted: &TrustedSet, cfg: &ExpertNetConfig, seed: u64) -> Result<ExpertNetPair> {
    cfg.validate()?;
    let ds = trusted.dataset();
    let c = ds.num_classes();
    let truth = ds.true_labels().ok_or(Error::MissingTrueLabels)?.to_vec();
    for class in 0..c {
        if !truth.contains(&class) {
            return Err(Error::MissingClass(class));
        }
    }
    let given = ds.given_labels();
    let d = ds.dim();
    let x = ds.features();

    let mut sizes = vec![d];
    sizes.extend(&cfg.amateur_hidden);
    sizes.push(c);
    let amateur_act = vec![Activation::Relu; cfg.amateur_hidden.len()];
    let mut amateur = init_network(&sizes, &amateur_act, OutputHead::Softmax, derive_seed(seed, &[Tag::Str("amateur")]))?;
    let h = cfg.expert_width;
    let mut expert = init_network(
        &[2 * c, h, h, h, c],
        &[Activation::LeakyRelu(LEAKY_SLOPE); 3],
        OutputHead::NormalizedSigmoid,
        derive_seed(seed, &[Tag::Str("expert")]),
    )?;
    let mut amateur_opt = Sgd::new(&amateur, cfg.train.clone())?;
    let mut expert_opt = Sgd::new(&expert, cfg.train.clone())?;
    let mut rng = rng_from(derive_seed(seed, &[Tag::Str("expertnet-order")]));
    let mut order: Vec<usize> = (0..ds.len()).collect();

    for _ in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.train.batch_size) {
            let local: Vec<usize> = (0..batch.len()).collect();
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&k| given[k]).collect();
            let tb: Vec<usize> = batch.iter().map(|&k| truth[k]).collect();

            let pa = amateur.forward(xb.view())?;
            let input = expert_input(pa.view(), &yb);
            expert_opt.step(&mut expert, input.view(), &local, &CrossEntropy { labels: tb })?;

            let targets = expert.forward(input.view())?;
            amateur_opt.step(&mut amateur, xb.view(), &local, &SoftCrossEntropy { targets })?;
        }
        amateur_opt.next_epoch();
        expert_opt.next_epoch();
    }
    Ok(ExpertNetPair { amateur, expert })
}

/// Attaches the pair's inferred distributions to an untrusted dataset.
/// Reads only features and given labels.
pub fn infer_labels(pair: &ExpertNetPair, ds: &Dataset) -> Result<EnrichedDataset> {
    if ds.num_classes() != pair.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: pair.num_classes(),
            found: ds.num_classes(),
        });
    }
    let probs = pair.infer(ds.features(), ds.given_labels())?;
    EnrichedDataset::new(ds.features().to_owned(), ds.given_labels().to_vec(), probs, ds.num_classes())
}
