//! Loss functions on probability vectors, their batch gradients, and the
//! per-sample weights used by the trusted-data robust loss and by D2L.
//!
//! Every log takes `max(p, PROB_FLOOR)`. Gradients use the exact `1/p`
//! (guarded only against division by zero) so a nearly-dead class still
//! receives a useful push.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::data::argmax;
use crate::error::{validation, Error, Result};
use crate::nn::LossContract;
use crate::noise::TransitionMatrix;

/// Floor applied inside every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Value substituted for `log 0` in the reverse cross-entropy term of SCL.
pub const RCE_LOG_ZERO: f64 = -4.0;

/// Returned by [`lid_estimate`] when all neighbours are equidistant.
pub const DEFAULT_LID_CAP: f64 = 1e4;

/// Below this previous entropy the dynamic weight is held constant.
pub const ENTROPY_GUARD: f64 = 1e-8;

fn ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn inv(p: f64) -> f64 {
    1.0 / p.max(f64::MIN_POSITIVE)
}

fn check_label(label: usize, c: usize) -> Result<()> {
    if label >= c {
        return Err(validation(format!("label {label} not below class count {c}")));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(validation(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    check_label(label, probs.len())?;
    Ok(-ln(probs[label]))
}

/// Shannon entropy in nats, or divided by `ln c` when `normalized`.
pub fn entropy(probs: &[f64], normalized: bool) -> f64 {
    let s: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * ln(p)).sum();
    let s = s.max(0.0);
    if normalized && probs.len() > 1 {
        (s / (probs.len() as f64).ln()).min(1.0)
    } else {
        s
    }
}

/// Initial weight on the given label: normalized entropy of the inferred
/// distribution. A confident inference puts all weight on the inferred label.
pub fn alpha_init(inferred: &[f64]) -> f64 {
    entropy(inferred, true)
}

/// `alpha_prev · (1 + (s_curr − s_prev)/s_prev)`, clamped to `[0, 1]`.
/// Held at `alpha_prev` when `s_prev` is below [`ENTROPY_GUARD`].
pub fn alpha_update(alpha_prev: f64, s_prev: f64, s_curr: f64) -> f64 {
    if s_prev < ENTROPY_GUARD {
        return alpha_prev;
    }
    (alpha_prev * (1.0 + (s_curr - s_prev) / s_prev)).clamp(0.0, 1.0)
}

/// `α·H(p, y) + (1−α)·H(p, ỹ)`.
pub fn robust_loss(probs: &[f64], given: usize, inferred: usize, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    Ok(alpha * cross_entropy(probs, given)? + (1.0 - alpha) * cross_entropy(probs, inferred)?)
}

/// Symmetric cross-entropy: `a·CE + b·RCE`, where the reverse term swaps the
/// roles of prediction and one-hot label and uses [`RCE_LOG_ZERO`] for `log 0`.
pub fn scl_loss(probs: &[f64], label: usize, a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(validation("SCL weights must be nonnegative"));
    }
    let ce = cross_entropy(probs, label)?;
    let rce = -RCE_LOG_ZERO * (1.0 - probs[label]);
    Ok(a * ce + b * rce)
}

/// LID from neighbour distances: `−(mean_i log(r_i / r_k))⁻¹` over the `k`
/// smallest distances, or `cap` when the mean log is numerically zero.
pub fn lid_from_distances(distances: &mut [f64], k: usize, cap: f64) -> Result<f64> {
    if k < 2 {
        return Err(validation("LID needs k >= 2"));
    }
    if distances.len() < k {
        return Err(validation(format!(
            "LID needs at least {k} neighbours, batch has {}",
            distances.len()
        )));
    }
    distances.select_nth_unstable_by(k - 1, f64::total_cmp);
    let r_max = distances[k - 1].max(PROB_FLOOR);
    let mean: f64 = distances[..k].iter().map(|&r| (r.max(PROB_FLOOR) / r_max).ln()).sum::<f64>() / k as f64;
    if mean.abs() < 1e-12 {
        return Ok(cap);
    }
    Ok((-1.0 / mean).min(cap))
}

fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// LID of `query` against the rows of `batch`, which must not contain the
/// query itself.
pub fn lid_estimate(query: ArrayView1<'_, f64>, batch: ArrayView2<'_, f64>, k: usize, cap: f64) -> Result<f64> {
    if query.len() != batch.ncols() {
        return Err(Error::DimensionMismatch {
            expected: batch.ncols(),
            found: query.len(),
        });
    }
    let mut d: Vec<f64> = batch.rows().into_iter().map(|r| distance(query, r)).collect();
    lid_from_distances(&mut d, k, cap)
}

/// LID of every row of `batch` against the other rows.
pub fn batch_lids(batch: ArrayView2<'_, f64>, k: usize, cap: f64) -> Result<Vec<f64>> {
    let n = batch.nrows();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(batch.row(i), batch.row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
            lid_from_distances(&mut d, k, cap)
        })
        .collect()
}

/// `exp(−(epoch/total)·lid/lid_min)`.
pub fn d2l_alpha(epoch: usize, total: usize, lid: f64, lid_min: f64) -> Result<f64> {
    if lid_min.is_nan() || lid_min <= 0.0 {
        return Err(validation(format!("LID minimum must be positive, got {lid_min}")));
    }
    if total == 0 {
        return Err(validation("total epochs must be positive"));
    }
    Ok((-(epoch as f64 / total as f64) * lid / lid_min).exp())
}

/// Cross-entropy against `α·onehot(given) + (1−α)·onehot(argmax probs)`.
pub fn d2l_loss(probs: &[f64], given: usize, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    let pred = argmax(ArrayView1::from(probs));
    Ok(alpha * cross_entropy(probs, given)? + (1.0 - alpha) * cross_entropy(probs, pred)?)
}

/// `−log((Tᵀ p)[given])`.
pub fn forward_loss(probs: &[f64], given: usize, t: &TransitionMatrix) -> Result<f64> {
    let c = t.num_classes();
    if probs.len() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: probs.len(),
        });
    }
    check_label(given, c)?;
    Ok(-ln(t.as_array().column(given).dot(&ArrayView1::from(probs))))
}

/// `−Σ_i (α·onehot_i + (1−α)·p_i)·log p_i`.
pub fn bootstrap_loss(probs: &[f64], given: usize, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    check_label(given, probs.len())?;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let target = if i == given { alpha } else { 0.0 } + (1.0 - alpha) * p;
            if target == 0.0 {
                0.0
            } else {
                -target * ln(p)
            }
        })
        .sum())
}

/// Applies `f(row_index, sample, probs_row, grad_row) -> loss` to every row
/// and averages.
fn batch<F>(probs: ArrayView2<'_, f64>, samples: &[usize], mut f: F) -> (f64, Array2<f64>)
where
    F: FnMut(usize, &[f64], &mut [f64]) -> f64,
{
    let probs = probs.as_standard_layout();
    let n = probs.nrows().max(1) as f64;
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    for (r, &s) in samples.iter().enumerate() {
        let p = probs.row(r);
        let p = p.as_slice().expect("standard layout");
        let mut g = grad.row_mut(r);
        let g = g.as_slice_mut().expect("standard layout");
        total += f(s, p, g);
    }
    grad /= n;
    (total / n, grad)
}

/// Cross-entropy against hard labels indexed by sample.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub labels: Vec<usize>,
}

impl LossContract for CrossEntropy {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        batch(probs, samples, |s, p, g| {
            let y = self.labels[s];
            g[y] = -inv(p[y]);
            -ln(p[y])
        })
    }
}

/// Cross-entropy against soft target rows indexed by sample.
#[derive(Debug, Clone)]
pub struct SoftCrossEntropy {
    pub targets: Array2<f64>,
}

impl LossContract for SoftCrossEntropy {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        batch(probs, samples, |s, p, g| {
            let t = self.targets.row(s);
            let mut loss = 0.0;
            for (j, &tj) in t.iter().enumerate() {
                if tj != 0.0 {
                    loss -= tj * ln(p[j]);
                    g[j] = -tj * inv(p[j]);
                }
            }
            loss
        })
    }
}

/// The robust loss with per-sample weights on the given label.
#[derive(Debug, Clone)]
pub struct RobustLoss {
    pub given: Vec<usize>,
    pub inferred: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl LossContract for RobustLoss {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        batch(probs, samples, |s, p, g| {
            let (y, yi, a) = (self.given[s], self.inferred[s], self.alphas[s]);
            g[y] -= a * inv(p[y]);
            g[yi] -= (1.0 - a) * inv(p[yi]);
            -a * ln(p[y]) - (1.0 - a) * ln(p[yi])
        })
    }
}

/// Symmetric cross-entropy.
#[derive(Debug, Clone)]
pub struct SymmetricCe {
    pub labels: Vec<usize>,
    pub a: f64,
    pub b: f64,
}

impl LossContract for SymmetricCe {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        batch(probs, samples, |s, p, g| {
            let y = self.labels[s];
            // the reverse term is −A·Σ_{j≠y} p_j
            for (j, gj) in g.iter_mut().enumerate() {
                if j != y {
                    *gj = -RCE_LOG_ZERO * self.b;
                }
            }
            g[y] = -self.a * inv(p[y]);
            let rest: f64 = p.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| v).sum();
            -self.a * ln(p[y]) - RCE_LOG_ZERO * self.b * rest
        })
    }
}

/// Cross-entropy against a mix of the given label and the current prediction.
/// The prediction's argmax is treated as a constant target.
#[derive(Debug, Clone)]
pub struct D2lLoss {
    pub labels: Vec<usize>,
    pub alpha: f64,
}

impl LossContract for D2lLoss {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        let a = self.alpha;
        batch(probs, samples, |s, p, g| {
            let y = self.labels[s];
            let m = argmax(ArrayView1::from(p));
            g[y] -= a * inv(p[y]);
            g[m] -= (1.0 - a) * inv(p[m]);
            -a * ln(p[y]) - (1.0 - a) * ln(p[m])
        })
    }
}

/// Forward correction through a fixed transition matrix.
#[derive(Debug, Clone)]
pub struct ForwardLoss {
    pub labels: Vec<usize>,
    pub transition: TransitionMatrix,
}

impl LossContract for ForwardLoss {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        let t = self.transition.as_array();
        batch(probs, samples, |s, p, g| {
            let y = self.labels[s];
            let col = t.column(y);
            let q: f64 = col.iter().zip(p).map(|(a, b)| a * b).sum();
            let w = inv(q);
            for (gj, &tj) in g.iter_mut().zip(col.iter()) {
                *gj = -tj * w;
            }
            -ln(q)
        })
    }
}

/// Soft bootstrapping with a fixed weight on the given label.
#[derive(Debug, Clone)]
pub struct BootstrapLoss {
    pub labels: Vec<usize>,
    pub alpha: f64,
}

impl LossContract for BootstrapLoss {
    fn loss_and_grad(&self, probs: ArrayView2<'_, f64>, samples: &[usize]) -> (f64, Array2<f64>) {
        let a = self.alpha;
        batch(probs, samples, |s, p, g| {
            let y = self.labels[s];
            let mut loss = 0.0;
            for (j, (&pj, gj)) in p.iter().zip(g.iter_mut()).enumerate() {
                let hard = if j == y { a } else { 0.0 };
                loss -= (hard + (1.0 - a) * pj) * ln(pj);
                *gj = -hard * inv(pj) - (1.0 - a) * (ln(pj) + 1.0);
            }
            loss
        })
    }
}

/// Per-sample weights on the given label, updated once per epoch from the
/// change in the model's prediction entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaState {
    alphas: Vec<f64>,
    prev_entropy: Vec<f64>,
    epoch: usize,
}

impl AlphaState {
    /// Starts every weight at the normalized entropy of its inferred
    /// distribution, which also serves as the first "previous" entropy.
    pub fn new(inferred_probs: ArrayView2<'_, f64>) -> Self {
        let rows = inferred_probs.as_standard_layout();
        let entropies: Vec<f64> = rows
            .rows()
            .into_iter()
            .map(|r| alpha_init(r.as_slice().expect("standard layout")))
            .collect();
        Self {
            alphas: entropies.clone(),
            prev_entropy: entropies,
            epoch: 0,
        }
    }

    /// Applies one update from the current normalized prediction entropies.
    pub fn update(&mut self, current: &[f64]) -> Result<()> {
        if current.len() != self.alphas.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alphas.len(),
                found: current.len(),
            });
        }
        for ((a, prev), &cur) in self.alphas.iter_mut().zip(&mut self.prev_entropy).zip(current) {
            *a = alpha_update(*a, *prev, cur);
            *prev = cur.max(0.0);
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn prev_entropy(&self) -> &[f64] {
        &self.prev_entropy
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn mean_alpha(&self) -> f64 {
        if self.alphas.is_empty() {
            return 0.0;
        }
        self.alphas.iter().sum::<f64>() / self.alphas.len() as f64
    }
}

/// LID history of a D2L run and the resulting per-epoch weight.
#[derive(Debug, Clone, PartialEq)]
pub struct D2lState {
    lid_history: Vec<f64>,
    total_epochs: usize,
    k: usize,
    cap: f64,
}

impl D2lState {
    pub fn new(total_epochs: usize, k: usize) -> Result<Self> {
        if total_epochs == 0 {
            return Err(validation("total epochs must be positive"));
        }
        if k < 2 {
            return Err(validation("LID needs k >= 2"));
        }
        Ok(Self {
            lid_history: Vec::new(),
            total_epochs,
            k,
            cap: DEFAULT_LID_CAP,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn lid_history(&self) -> &[f64] {
        &self.lid_history
    }

    /// Smallest LID recorded so far.
    pub fn min_lid(&self) -> Option<f64> {
        self.lid_history.iter().copied().reduce(f64::min)
    }

    /// Records the LID measured at the start of the next epoch and returns
    /// that epoch's weight on the given label. The first epoch gets 1.
    pub fn record(&mut self, lid: f64) -> Result<f64> {
        if !(lid.is_finite() && lid >= 0.0) {
            return Err(validation(format!("LID must be finite and nonnegative, got {lid}")));
        }
        let epoch = self.lid_history.len();
        let alpha = match self.min_lid() {
            None => 1.0,
            Some(min) if min <= 0.0 => 1.0,
            Some(min) => d2l_alpha(epoch, self.total_epochs, lid, min)?,
        };
        self.lid_history.push(lid);
        Ok(alpha)
    }
}

/// Rows of `epoch,sample,alpha,entropy`, one per sample per epoch.
#[derive(Debug, Clone, Default)]
pub struct AlphaTrace {
    rows: Vec<(usize, usize, f64, f64)>,
}

impl AlphaTrace {
    /// Appends the state's current weights with the matching entropies.
    pub fn record(&mut self, state: &AlphaState) {
        let e = state.epoch();
        for (k, (&a, &s)) in state.alphas().iter().zip(state.prev_entropy()).enumerate() {
            self.rows.push((e, k, a, s));
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "sample", "alpha", "entropy"])?;
        for (e, k, a, s) in &self.rows {
            w.write_record([e.to_string(), k.to_string(), a.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
