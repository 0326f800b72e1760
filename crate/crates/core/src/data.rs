//! Datasets with given (possibly corrupted) and true labels.

use std::cell::Cell;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{validation, Error, Result};
use crate::noise::TransitionMatrix;
use crate::rng::{derive_seed, rng_from, Tag};

thread_local! {
    static TRUE_LABEL_READS: Cell<usize> = const { Cell::new(0) };
}

/// Number of times [`Dataset::true_labels`] was called on this thread.
///
/// Used to check that a code path never looks at ground truth.
pub fn true_label_reads() -> usize {
    TRUE_LABEL_READS.with(Cell::get)
}

/// Which label of a sample to compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Given,
    True,
}

/// Feature matrix with given labels and, optionally, true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    given: Vec<usize>,
    truth: Option<Vec<usize>>,
    num_classes: usize,
}

fn check_labels(labels: &[usize], c: usize, what: &str) -> Result<()> {
    match labels.iter().find(|&&l| l >= c) {
        Some(l) => Err(validation(format!("{what} label {l} not below class count {c}"))),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        given: Vec<usize>,
        truth: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if num_classes < 2 {
            return Err(validation("a dataset needs at least 2 classes"));
        }
        if given.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: given.len(),
            });
        }
        check_labels(&given, num_classes, "given")?;
        if let Some(t) = &truth {
            if t.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: t.len(),
                });
            }
            check_labels(t, num_classes, "true")?;
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(validation("features contain non-finite values"));
        }
        Ok(Self {
            features,
            given,
            truth,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.given.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given
    }

    pub fn has_true_labels(&self) -> bool {
        self.truth.is_some()
    }

    /// Ground-truth labels. Every call is counted, see [`true_label_reads`].
    pub fn true_labels(&self) -> Option<&[usize]> {
        TRUE_LABEL_READS.with(|c| c.set(c.get() + 1));
        self.truth.as_deref()
    }

    /// Labels of the requested kind.
    pub fn labels(&self, kind: LabelKind) -> Result<&[usize]> {
        match kind {
            LabelKind::Given => Ok(&self.given),
            LabelKind::True => self.true_labels().ok_or(Error::MissingTrueLabels),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            given: indices.iter().map(|&i| self.given[i]).collect(),
            truth: self
                .truth
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    /// Same samples without true labels.
    pub fn without_true_labels(&self) -> Dataset {
        Dataset {
            truth: None,
            ..self.clone()
        }
    }

    pub fn with_given_labels(&self, given: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.features.clone(), given, self.truth.clone(), self.num_classes)
    }
}

/// Dataset whose every sample carries both a given and a true label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustedSet(Dataset);

impl TrustedSet {
    pub fn new(ds: Dataset) -> Result<Self> {
        if !ds.has_true_labels() {
            return Err(Error::MissingTrueLabels);
        }
        Ok(Self(ds))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn into_inner(self) -> Dataset {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Untrusted samples enriched with inferred labels.
///
/// Holds no true labels, so nothing trained from it can read ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedDataset {
    features: Array2<f64>,
    given: Vec<usize>,
    inferred: Vec<usize>,
    inferred_probs: Array2<f64>,
    num_classes: usize,
}

impl EnrichedDataset {
    /// Validates shapes, row sums and argmax consistency.
    pub fn new(
        features: Array2<f64>,
        given: Vec<usize>,
        inferred_probs: Array2<f64>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        for len in [given.len(), inferred_probs.nrows()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if inferred_probs.ncols() != num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                found: inferred_probs.ncols(),
            });
        }
        check_labels(&given, num_classes, "given")?;
        for (k, row) in inferred_probs.rows().into_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| *p < 0.0) {
                return Err(validation(format!("inferred distribution {k} sums to {s}")));
            }
        }
        let inferred = inferred_probs.rows().into_iter().map(argmax).collect();
        Ok(Self {
            features,
            given,
            inferred,
            inferred_probs,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.given.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given
    }

    pub fn inferred_labels(&self) -> &[usize] {
        &self.inferred
    }

    pub fn inferred_probs(&self) -> ArrayView2<'_, f64> {
        self.inferred_probs.view()
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Isotropic unit-variance Gaussian clusters with fixed class means.
#[derive(Debug, Clone)]
pub struct BlobModel {
    means: Array2<f64>,
}

impl BlobModel {
    /// Places `c` class means in `d` dimensions at pairwise distance at least
    /// `separation`.
    ///
    /// The first `2d` means sit on the scaled coordinate axes `±(s/√2)·e_k`,
    /// which are exactly `s` or `√2·s` apart; any further means are drawn by
    /// rejection sampling in a cube that grows until they fit.
    pub fn new(c: usize, d: usize, separation: f64, seed: u64) -> Result<Self> {
        if c < 2 || d < 2 {
            return Err(validation(format!("blobs need c >= 2 and d >= 2, got c={c}, d={d}")));
        }
        if !(separation.is_finite() && separation > 0.0) {
            return Err(validation(format!("separation {separation} must be positive")));
        }
        let mut rng = rng_from(derive_seed(seed, &[Tag::Str("blob-means")]));
        let mut axes: Vec<usize> = (0..d).collect();
        axes.shuffle(&mut rng);
        let radius = separation / std::f64::consts::SQRT_2;
        let mut means = Array2::<f64>::zeros((c, d));
        for i in 0..c.min(2 * d) {
            let sign = if i < d { 1.0 } else { -1.0 };
            means[[i, axes[i % d]]] = sign * radius;
        }
        let mut half_width = 2.0 * separation;
        let mut failures = 0;
        let mut i = 2 * d;
        while i < c {
            let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-half_width..half_width)).collect();
            let ok = (0..i).all(|m| {
                let d2: f64 = means.row(m).iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum();
                d2 >= separation * separation
            });
            if ok {
                means.row_mut(i).assign(&ArrayView1::from(&cand));
                i += 1;
                failures = 0;
            } else {
                failures += 1;
                if failures > 200 {
                    half_width *= 1.25;
                    failures = 0;
                }
            }
        }
        Ok(Self { means })
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    /// Draws `n_per_class` clean samples per class, grouped by class.
    pub fn sample(&self, n_per_class: usize, seed: u64) -> Result<Dataset> {
        let (c, d) = self.means.dim();
        let mut rng = rng_from(derive_seed(seed, &[Tag::Str("blob-samples")]));
        let n = c * n_per_class;
        let mut features = Array2::<f64>::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for (k, mut row) in features.rows_mut().into_iter().enumerate() {
            let class = k / n_per_class;
            for (x, m) in row.iter_mut().zip(self.means.row(class)) {
                let z: f64 = rng.sample(StandardNormal);
                *x = m + z;
            }
            labels.push(class);
        }
        Dataset::new(features, labels.clone(), Some(labels), c)
    }
}

/// Clean Gaussian blobs: `n_per_class` samples for each of `c` classes in `d`
/// dimensions with class means at least `separation` apart.
pub fn gen_blobs(c: usize, d: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    BlobModel::new(c, d, separation, seed)?.sample(n_per_class, seed)
}

/// Draws a label from a row of `T` given a uniform variate.
fn sample_row(row: ArrayView1<'_, f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding slack of the last nonzero entry
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Replaces every given label with a draw from `T[true label]`.
///
/// Sample `k` uses its own stream derived from `(seed, k)`, so its label does
/// not depend on how many draws other samples consumed.
pub fn corrupt(ds: &Dataset, t: &TransitionMatrix, seed: u64) -> Result<Dataset> {
    if t.num_classes() != ds.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_classes(),
            found: t.num_classes(),
        });
    }
    let truth = ds.true_labels().ok_or(Error::MissingTrueLabels)?;
    let given = truth
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let mut rng = rng_from(derive_seed(seed, &[Tag::U64(k as u64)]));
            sample_row(t.row(y), rng.random::<f64>())
        })
        .collect();
    ds.with_given_labels(given)
}

/// Stratified split into a trusted part and the untrusted remainder.
///
/// Each true class contributes `round(fraction · n_class)` samples to the
/// trusted part. Both parts keep the original sample order and true labels;
/// the untrusted part's true labels are for evaluation only.
pub fn split_trusted(ds: &Dataset, fraction: f64, seed: u64) -> Result<(TrustedSet, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(validation(format!("trusted fraction {fraction} outside (0, 1)")));
    }
    let truth = ds.true_labels().ok_or(Error::MissingTrueLabels)?;
    let c = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (k, &y) in truth.iter().enumerate() {
        by_class[y].push(k);
    }
    let mut rng = rng_from(derive_seed(seed, &[Tag::Str("trusted-split")]));
    let mut trusted_mask = vec![false; ds.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let take = (fraction * members.len() as f64).round() as usize;
        if take == 0 {
            return Err(Error::Stratification(format!(
                "fraction {fraction} of {} samples leaves class {class} without trusted samples",
                members.len()
            )));
        }
        if take == members.len() {
            return Err(Error::Stratification(format!(
                "fraction {fraction} leaves class {class} without untrusted samples"
            )));
        }
        members.shuffle(&mut rng);
        for &k in &members[..take] {
            trusted_mask[k] = true;
        }
    }
    let (trusted, rest): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&k| trusted_mask[k]);
    Ok((TrustedSet::new(ds.subset(&trusted))?, ds.subset(&rest)))
}

/// Row `i` is the frequency distribution of given labels among samples whose
/// true label is `i`.
pub fn empirical_transition(true_labels: &[usize], given: &[usize], c: usize) -> Result<TransitionMatrix> {
    if true_labels.len() != given.len() {
        return Err(Error::DimensionMismatch {
            expected: true_labels.len(),
            found: given.len(),
        });
    }
    check_labels(true_labels, c, "true")?;
    check_labels(given, c, "given")?;
    let mut counts = Array2::<f64>::zeros((c, c));
    for (&t, &g) in true_labels.iter().zip(given) {
        counts[[t, g]] += 1.0;
    }
    for (i, mut row) in counts.rows_mut().into_iter().enumerate() {
        let n = row.sum();
        if n == 0.0 {
            return Err(Error::MissingClass(i));
        }
        row /= n;
    }
    TransitionMatrix::new(counts)
}

/// Writes `f0,…,f{d-1},given,true`; the true column is empty when absent.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("given".into());
    header.push("true".into());
    w.write_record(&header)?;
    let truth = ds.truth.as_deref();
    for (k, row) in ds.features.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(ds.given[k].to_string());
        rec.push(truth.map(|t| t[k].to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. The true column must be either
/// filled for every row or empty for every row.
pub fn load_dataset(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = r.headers()?.clone();
    let ncols = header.len();
    if ncols < 3 {
        return Err(parse_err(1, "need at least one feature plus given,true columns".into()));
    }
    let d = ncols - 2;
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(1, format!("column {j} is `{name}`, expected `f{j}`")));
        }
    }
    if &header[d] != "given" || &header[d + 1] != "true" {
        return Err(parse_err(1, "last two columns must be `given,true`".into()));
    }
    let mut features = Vec::new();
    let mut given = Vec::new();
    let mut truth: Vec<Option<usize>> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec?;
        if rec.len() != ncols {
            return Err(parse_err(line, format!("{} fields, expected {ncols}", rec.len())));
        }
        for f in rec.iter().take(d) {
            features.push(f.trim().parse::<f64>().map_err(|e| parse_err(line, format!("`{f}`: {e}")))?);
        }
        let label = |f: &str| f.trim().parse::<usize>().map_err(|e| parse_err(line, format!("label `{f}`: {e}")));
        given.push(label(&rec[d])?);
        truth.push(if rec[d + 1].trim().is_empty() { None } else { Some(label(&rec[d + 1])?) });
    }
    let n = given.len();
    let features = Array2::from_shape_vec((n, d), features).map_err(|e| parse_err(0, e.to_string()))?;
    let truth = if truth.iter().all(Option::is_some) && n > 0 {
        Some(truth.into_iter().flatten().collect())
    } else if truth.iter().all(Option::is_none) {
        None
    } else {
        return Err(parse_err(0, "true column is only partially filled".into()));
    };
    Dataset::new(features, given, truth, num_classes)
}
