#![allow(dead_code)]

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trustlab::nn::{LossContract, Network};
use trustlab::noise::TransitionMatrix;
use trustlab::rng::rng_from;

/// Random row-stochastic matrix with rows drawn uniformly from the simplex.
pub fn random_transition(c: usize, rng: &mut ChaCha8Rng) -> TransitionMatrix {
    let mut rows = Vec::with_capacity(c);
    for _ in 0..c {
        let raw: Vec<f64> = (0..c).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = raw.iter().sum();
        rows.push(raw.into_iter().map(|v| v / s).collect());
    }
    TransitionMatrix::from_rows(rows).unwrap()
}

/// Simulates `n` draws of (true class, two independent corruptions) and
/// returns the hit rate of the two corrupted labels agreeing, plus its
/// standard error.
pub fn monte_carlo_agreement(t: &TransitionMatrix, prior: &[f64], n: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng_from(seed);
    let draw = |rng: &mut ChaCha8Rng, w: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        w.len() - 1
    };
    let rows = t.to_rows();
    let mut hits = 0usize;
    for _ in 0..n {
        let i = draw(&mut rng, prior);
        let a = draw(&mut rng, &rows[i]);
        let b = draw(&mut rng, &rows[i]);
        hits += usize::from(a == b);
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn mean_loss(net: &Network, x: &Array2<f64>, samples: &[usize], loss: &dyn LossContract) -> f64 {
    let probs = net.forward(x.view()).unwrap();
    loss.loss_and_grad(probs.view(), samples).0
}

/// Largest relative error between backprop and central differences over all
/// parameters, with `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn gradient_check(net: &Network, x: &Array2<f64>, loss: &dyn LossContract) -> f64 {
    const H: f64 = 1e-5;
    let samples: Vec<usize> = (0..x.len_of(Axis(0))).collect();
    let trace = net.forward_trace(x.view()).unwrap();
    let (_, dprobs) = loss.loss_and_grad(trace.probs.view(), &samples);
    let grads = net.backward(&trace, dprobs.view());
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let w0 = net.layers()[l].weights[[r, c]];
                probe.layers_mut()[l].weights[[r, c]] = w0 + H;
                let up = mean_loss(&probe, x, &samples, loss);
                probe.layers_mut()[l].weights[[r, c]] = w0 - H;
                let down = mean_loss(&probe, x, &samples, loss);
                probe.layers_mut()[l].weights[[r, c]] = w0;
                worst = worst.max(rel(grads.weights[l][[r, c]], (up - down) / (2.0 * H)));
            }
        }
        for k in 0..net.layers()[l].bias.len() {
            let b0 = net.layers()[l].bias[k];
            probe.layers_mut()[l].bias[k] = b0 + H;
            let up = mean_loss(&probe, x, &samples, loss);
            probe.layers_mut()[l].bias[k] = b0 - H;
            let down = mean_loss(&probe, x, &samples, loss);
            probe.layers_mut()[l].bias[k] = b0;
            worst = worst.max(rel(grads.biases[l][k], (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// Standard-normal inputs.
pub fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// One instance of every loss contract over `n` samples and `c` classes,
/// with randomized targets and weights.
pub fn all_contracts(n: usize, c: usize, seed: u64) -> Vec<(&'static str, Box<dyn LossContract>)> {
    use trustlab::losses::*;
    let mut rng = rng_from(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let inferred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let alphas: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut targets = Array2::from_shape_simple_fn((n, c), || rng.random::<f64>() + 0.05);
    for mut row in targets.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let mut near_identity = vec![vec![0.0; c]; c];
    for (i, row) in near_identity.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 0.7 } else { 0.3 / (c - 1) as f64 };
        }
    }
    vec![
        ("ce", Box::new(CrossEntropy { labels: labels.clone() })),
        ("soft-ce", Box::new(SoftCrossEntropy { targets })),
        (
            "robust",
            Box::new(RobustLoss {
                given: labels.clone(),
                inferred,
                alphas,
            }),
        ),
        (
            "scl",
            Box::new(SymmetricCe {
                labels: labels.clone(),
                a: 0.1,
                b: 1.0,
            }),
        ),
        (
            "d2l",
            Box::new(D2lLoss {
                labels: labels.clone(),
                alpha: 0.6,
            }),
        ),
        (
            "forward",
            Box::new(ForwardLoss {
                labels: labels.clone(),
                transition: TransitionMatrix::from_rows(near_identity).unwrap(),
            }),
        ),
        ("bootstrap", Box::new(BootstrapLoss { labels, alpha: 0.8 })),
    ]
}

/// Small networks covering every hidden activation and both heads.
pub fn small_networks(d: usize, c: usize, seed: u64) -> Vec<(String, Network)> {
    use trustlab::nn::{init_network, Activation, OutputHead};
    let acts = [
        Activation::Relu,
        Activation::LeakyRelu(0.01),
        Activation::Sigmoid,
        Activation::Linear,
    ];
    let mut out = Vec::new();
    for head in [OutputHead::Softmax, OutputHead::NormalizedSigmoid] {
        for (k, act) in acts.iter().enumerate() {
            let net = init_network(&[d, 7, 5, c], &[*act, *act], head, seed + k as u64).unwrap();
            out.push((format!("{act:?}/{head:?}"), net));
        }
    }
    out
}
