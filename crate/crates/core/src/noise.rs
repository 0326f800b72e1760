//! Label-noise transition matrices.
//!
//! A [`TransitionMatrix`] `T` describes how labels are corrupted: `T[i][j]` is
//! the probability that a sample whose true class is `i` carries the given
//! label `j`. Matrices are built from a parametric [`NoiseSpec`], inspected
//! with [`noise_ratio`], rescaled to a different noise ratio with
//! [`rescale_transition`], and stored as plain comma-separated text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Tolerance on row sums for stochastic vectors and matrices.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Row-stochastic `c × c` matrix with `T[i][j] = P(given = j | true = i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    rows: Array2<f64>,
}

impl TransitionMatrix {
    /// Validates and wraps a square matrix.
    ///
    /// Entries within `1e-12` outside `[0, 1]` are snapped to the interval.
    pub fn new(mut rows: Array2<f64>) -> Result<Self> {
        let (r, c) = rows.dim();
        if r != c {
            return Err(Error::InvalidMatrix(format!("matrix is {r}x{c}, not square")));
        }
        if c == 0 {
            return Err(Error::InvalidMatrix("matrix has no classes".into()));
        }
        for ((i, j), v) in rows.indexed_iter_mut() {
            if !v.is_finite() || *v < -1e-12 || *v > 1.0 + 1e-12 {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({i}, {j}) = {v} outside [0, 1]"
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
        for (i, row) in rows.rows().into_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        let mut data = Vec::with_capacity(c * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        let rows = Array2::from_shape_vec((c, c), data)
            .map_err(|e| Error::InvalidMatrix(e.to_string()))?;
        Self::new(rows)
    }

    pub fn identity(c: usize) -> Self {
        Self {
            rows: Array2::eye(c),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.rows.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[[i, j]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn as_array(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> Result<f64> {
        check_dim(self.num_classes(), other.num_classes())?;
        Ok(self
            .rows
            .iter()
            .zip(other.rows.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.to_rows()
    }
}

/// Distribution of true classes, `P(true = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior {
    probs: Array1<f64>,
}

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(validation("class prior is empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(validation("class prior has negative or non-finite entries"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(validation(format!("class prior sums to {s}")));
        }
        Ok(Self {
            probs: Array1::from(probs),
        })
    }

    pub fn uniform(c: usize) -> Self {
        Self {
            probs: Array1::from_elem(c, 1.0 / c as f64),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }
}

/// Parametric description of a label-noise pattern.
///
/// Truncated-normal families are supported on the class indices
/// `a = 0 ..= b = c - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Corrupted labels spread uniformly over the other classes.
    Symmetric { epsilon: f64 },
    /// Corrupted labels concentrate around class `mu` with spread `sigma`.
    TruncatedNormal { epsilon: f64, mu: usize, sigma: f64 },
    /// Mixture of two truncated normals, weighted `mix` and `1 - mix`.
    Bimodal {
        epsilon: f64,
        mu1: usize,
        sigma1: f64,
        mu2: usize,
        sigma2: f64,
        #[serde(default = "default_mix")]
        mix: f64,
    },
    /// Each `(source, target)` pair moves `epsilon` of the source class onto
    /// the target class; all other classes stay clean.
    PartialTargeted {
        epsilon: f64,
        mapping: Vec<(usize, usize)>,
    },
    /// An explicit matrix.
    Custom { matrix: TransitionMatrix },
}

fn default_mix() -> f64 {
    0.5
}

impl NoiseSpec {
    /// Short family name, used in reports and curve labels.
    pub fn family(&self) -> &'static str {
        match self {
            NoiseSpec::Symmetric { .. } => "symmetric",
            NoiseSpec::TruncatedNormal { .. } => "truncated-normal",
            NoiseSpec::Bimodal { .. } => "bimodal",
            NoiseSpec::PartialTargeted { .. } => "partial-targeted",
            NoiseSpec::Custom { .. } => "custom",
        }
    }

    /// The corruption parameter, if the family has one.
    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            NoiseSpec::Symmetric { epsilon }
            | NoiseSpec::TruncatedNormal { epsilon, .. }
            | NoiseSpec::Bimodal { epsilon, .. }
            | NoiseSpec::PartialTargeted { epsilon, .. } => Some(epsilon),
            NoiseSpec::Custom { .. } => None,
        }
    }

    /// Same family with a different `epsilon`. `Custom` is returned unchanged;
    /// use [`rescale_transition`] for explicit matrices.
    pub fn with_epsilon(&self, eps: f64) -> NoiseSpec {
        let mut out = self.clone();
        match &mut out {
            NoiseSpec::Symmetric { epsilon }
            | NoiseSpec::TruncatedNormal { epsilon, .. }
            | NoiseSpec::Bimodal { epsilon, .. }
            | NoiseSpec::PartialTargeted { epsilon, .. } => *epsilon = eps,
            NoiseSpec::Custom { .. } => {}
        }
        out
    }

    /// Affected classes `S` (the sources of a partial-targeted mapping).
    pub fn affected_classes(&self, c: usize) -> Vec<usize> {
        match self {
            NoiseSpec::PartialTargeted { mapping, .. } => mapping.iter().map(|&(s, _)| s).collect(),
            _ => (0..c).collect(),
        }
    }

    /// Checks the parameter invariants against a class count.
    pub fn validate(&self, c: usize) -> Result<()> {
        if c < 2 {
            return Err(validation(format!("need at least 2 classes, got {c}")));
        }
        if let Some(eps) = self.epsilon() {
            if !(0.0..=1.0).contains(&eps) {
                return Err(validation(format!("epsilon {eps} outside [0, 1]")));
            }
        }
        let class = |name: &str, v: usize| {
            if v >= c {
                Err(validation(format!("{name} = {v} is not a class index below {c}")))
            } else {
                Ok(())
            }
        };
        let spread = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                Err(validation(format!("{name} = {v} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            NoiseSpec::Symmetric { .. } => Ok(()),
            NoiseSpec::TruncatedNormal { mu, sigma, .. } => {
                class("mu", *mu)?;
                spread("sigma", *sigma)
            }
            NoiseSpec::Bimodal {
                mu1,
                sigma1,
                mu2,
                sigma2,
                mix,
                ..
            } => {
                class("mu1", *mu1)?;
                class("mu2", *mu2)?;
                spread("sigma1", *sigma1)?;
                spread("sigma2", *sigma2)?;
                if !(0.0..=1.0).contains(mix) {
                    return Err(validation(format!("mix {mix} outside [0, 1]")));
                }
                Ok(())
            }
            NoiseSpec::PartialTargeted { mapping, .. } => {
                let mut seen = vec![false; c];
                for &(s, t) in mapping {
                    class("source", s)?;
                    class("target", t)?;
                    if s == t {
                        return Err(validation(format!("class {s} mapped onto itself")));
                    }
                    if std::mem::replace(&mut seen[s], true) {
                        return Err(validation(format!("source class {s} listed twice")));
                    }
                }
                Ok(())
            }
            NoiseSpec::Custom { matrix } => check_dim(c, matrix.num_classes()),
        }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Log of the unnormalized normal density at each class index.
fn normal_log_weights(mu: usize, sigma: f64, c: usize) -> Vec<f64> {
    (0..c)
        .map(|j| {
            let d = j as f64 - mu as f64;
            -d * d / (2.0 * sigma * sigma)
        })
        .collect()
}

/// Normalizes log-weights over the indices not excluded, in log space so that
/// very small spreads never underflow to an all-zero row.
fn log_normalize(logw: &[f64], exclude: Option<usize>) -> Vec<f64> {
    let keep = |j: usize| Some(j) != exclude;
    let max = logw
        .iter()
        .enumerate()
        .filter(|&(j, _)| keep(j))
        .map(|(_, &w)| w)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logw
            .iter()
            .enumerate()
            .filter(|&(j, _)| keep(j))
            .map(|(_, &w)| (w - max).exp())
            .sum::<f64>()
            .ln();
    logw.iter()
        .enumerate()
        .map(|(j, &w)| if keep(j) { w - lse } else { f64::NEG_INFINITY })
        .collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log of the global noisy-label distribution for the asymmetric families.
fn noise_log_distribution(spec: &NoiseSpec, c: usize) -> Result<Vec<f64>> {
    match *spec {
        NoiseSpec::TruncatedNormal { mu, sigma, .. } => {
            Ok(log_normalize(&normal_log_weights(mu, sigma, c), None))
        }
        NoiseSpec::Bimodal {
            mu1,
            sigma1,
            mu2,
            sigma2,
            mix,
            ..
        } => {
            let a = log_normalize(&normal_log_weights(mu1, sigma1, c), None);
            let b = log_normalize(&normal_log_weights(mu2, sigma2, c), None);
            let (la, lb) = (mix.ln(), (1.0 - mix).ln());
            Ok(a.iter().zip(&b).map(|(x, y)| log_add(la + x, lb + y)).collect())
        }
        NoiseSpec::Symmetric { .. } => Err(Error::UnsupportedPattern("symmetric")),
        NoiseSpec::PartialTargeted { .. } => Err(Error::UnsupportedPattern("partial-targeted")),
        NoiseSpec::Custom { .. } => Err(Error::UnsupportedPattern("custom")),
    }
}

/// Global noisy-label distribution `P(given = j)` for the truncated-normal and
/// bimodal families: the normal density evaluated at the class indices
/// `0..c` and normalized; bimodal is the `mix`-weighted sum of two such
/// vectors.
pub fn noise_label_distribution(spec: &NoiseSpec, c: usize) -> Result<Vec<f64>> {
    spec.validate(c)?;
    let logp = noise_log_distribution(spec, c)?;
    Ok(logp.into_iter().map(f64::exp).collect())
}

/// Builds the transition matrix of a noise spec.
///
/// Rows of the asymmetric families spread `epsilon` over the classes other
/// than the row's own class, in proportion to [`noise_label_distribution`]
/// renormalized without the diagonal entry.
pub fn build_transition(spec: &NoiseSpec, c: usize) -> Result<TransitionMatrix> {
    spec.validate(c)?;
    let mut t = Array2::<f64>::zeros((c, c));
    match spec {
        NoiseSpec::Symmetric { epsilon } => {
            let off = epsilon / (c - 1) as f64;
            t.fill(off);
            t.diag_mut().fill(1.0 - epsilon);
        }
        NoiseSpec::TruncatedNormal { epsilon, .. } | NoiseSpec::Bimodal { epsilon, .. } => {
            let logp = noise_log_distribution(spec, c)?;
            for i in 0..c {
                let row = log_normalize(&logp, Some(i));
                for (j, lp) in row.into_iter().enumerate() {
                    t[[i, j]] = if j == i { 1.0 - epsilon } else { epsilon * lp.exp() };
                }
            }
        }
        NoiseSpec::PartialTargeted { epsilon, mapping } => {
            t.diag_mut().fill(1.0);
            for &(s, target) in mapping {
                t[[s, s]] = 1.0 - epsilon;
                t[[s, target]] = *epsilon;
            }
        }
        NoiseSpec::Custom { matrix } => return Ok(matrix.clone()),
    }
    TransitionMatrix::new(t)
}

/// Prior-weighted corruption probability `1 - Σ_i π_i T_ii`.
pub fn noise_ratio(t: &TransitionMatrix, prior: &ClassPrior) -> Result<f64> {
    check_dim(t.num_classes(), prior.num_classes())?;
    let kept: f64 = prior
        .probs()
        .iter()
        .enumerate()
        .map(|(i, p)| p * t.get(i, i))
        .sum();
    Ok(1.0 - kept)
}

/// Rescales a matrix to a target noise ratio by multiplying every
/// off-diagonal entry by one global factor and resetting each diagonal to
/// keep the rows stochastic.
pub fn rescale_transition(
    t: &TransitionMatrix,
    prior: &ClassPrior,
    epsilon_target: f64,
) -> Result<TransitionMatrix> {
    if !(0.0..=1.0).contains(&epsilon_target) {
        return Err(validation(format!("target epsilon {epsilon_target} outside [0, 1]")));
    }
    let current = noise_ratio(t, prior)?;
    if current <= 0.0 {
        return if epsilon_target == 0.0 {
            Ok(t.clone())
        } else {
            Err(Error::ZeroNoise)
        };
    }
    let scale = epsilon_target / current;
    let c = t.num_classes();
    let mut out = Array2::<f64>::zeros((c, c));
    for i in 0..c {
        let mut off = 0.0;
        for j in (0..c).filter(|&j| j != i) {
            let v = t.get(i, j) * scale;
            if v > 1.0 + 1e-12 {
                return Err(Error::InfeasibleScale(format!(
                    "entry ({i}, {j}) would become {v:.6} at scale {scale:.6}"
                )));
            }
            out[[i, j]] = v;
            off += v;
        }
        let diag = 1.0 - off;
        if diag < -1e-12 {
            return Err(Error::InfeasibleScale(format!(
                "diagonal {i} would become {diag:.6} at scale {scale:.6}"
            )));
        }
        out[[i, i]] = diag;
    }
    TransitionMatrix::new(out)
}

/// The matrix of a family at noise ratio `epsilon`: parametric families are
/// rebuilt, an explicit matrix is rescaled.
pub fn transition_at(spec: &NoiseSpec, epsilon: f64, c: usize, prior: &ClassPrior) -> Result<TransitionMatrix> {
    match spec {
        NoiseSpec::Custom { matrix } => rescale_transition(matrix, prior, epsilon),
        spec => build_transition(&spec.with_epsilon(epsilon), c),
    }
}

/// Formats a matrix as `c` lines of `c` comma-separated reals.
pub fn format_transition(t: &TransitionMatrix) -> String {
    let mut s = String::new();
    for row in t.as_array().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

pub fn parse_transition(text: &str, path: &Path) -> Result<TransitionMatrix> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(n + 1, format!("`{}`: {e}", f.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    n + 1,
                    format!("{} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "empty matrix file".into()));
    }
    if rows[0].len() != rows.len() {
        return Err(parse_err(
            rows.len(),
            format!("{} rows of {} columns is not square", rows.len(), rows[0].len()),
        ));
    }
    TransitionMatrix::from_rows(rows)
}

pub fn save_transition(t: &TransitionMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_transition(t))?;
    Ok(())
}

pub fn load_transition(path: impl AsRef<Path>) -> Result<TransitionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_transition(&text, path)
}
