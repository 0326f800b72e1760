//! Test-accuracy bounds for networks that fit their (noisy) training labels.
//!
//! If a network reproduces the label-corruption process, its prediction on a
//! test sample of true class `i` is distributed like a fresh draw from row
//! `T_i·`, independently of the test label, so
//!
//! ```text
//! P(prediction = given label) = Σ_i π_i Σ_j T_ij²
//! ```
//!
//! [`general_bound`] evaluates this for any matrix. [`lemma1_bound`] and
//! [`lemma2_bound`] are the closed forms for a fixed per-class noise ratio and
//! for noise restricted to a subset of classes.

use std::io::Write;
use std::path::Path;

use crate::error::{validation, Error, Result};
use crate::noise::{transition_at, ClassPrior, NoiseSpec, TransitionMatrix};

/// Probability that a fully fitted network's prediction equals the given
/// label: `Σ_i π_i Σ_j T_ij²`.
pub fn general_bound(t: &TransitionMatrix, prior: &ClassPrior) -> Result<f64> {
    let c = t.num_classes();
    if prior.num_classes() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: prior.num_classes(),
        });
    }
    let (mut hit, mut mass) = (0.0, 0.0);
    for (p, row) in prior.probs().iter().zip(t.as_array().rows()) {
        hit += p * row.iter().map(|v| v * v).sum::<f64>();
        mass += p;
    }
    // dividing by the summed prior makes a noise-free matrix score exactly 1
    Ok(hit / mass)
}

fn check_distribution(dist: &[f64], c: usize) -> Result<()> {
    if dist.len() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: dist.len(),
        });
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(validation("noise distribution has negative or non-finite entries"));
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(validation(format!("noise distribution sums to {s}")));
    }
    Ok(())
}

/// `Σ_{j≠i} q_j²` where `q` is `dist` without entry `i`, renormalized.
///
/// A distribution concentrated entirely on `i` leaves nothing to renormalize;
/// it is then read as class-independent and the sum runs over the full
/// support.
fn off_diagonal_square_sum(dist: &[f64], i: usize) -> f64 {
    let rest: f64 = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| p)
        .sum();
    if rest <= 0.0 {
        return dist.iter().map(|p| p * p).sum();
    }
    dist.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| (p / rest).powi(2))
        .sum()
}

/// Closed form for noise with the same ratio `epsilon` in every class:
/// `(1-ε)² + ε² Σ_{j≠i} P²(y=j)`, evaluated for each class with the noise
/// distribution renormalized off the diagonal and averaged under the uniform
/// prior.
pub fn lemma1_bound(epsilon: f64, noise_dist: &[f64], c: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(validation(format!("epsilon {epsilon} outside [0, 1]")));
    }
    check_distribution(noise_dist, c)?;
    let keep = (1.0 - epsilon).powi(2);
    let total: f64 = (0..c)
        .map(|i| keep + epsilon * epsilon * off_diagonal_square_sum(noise_dist, i))
        .sum();
    Ok(total / c as f64)
}

/// Closed form for noise confined to the classes in `affected`, with equal
/// class probabilities: `|U|/|C| + |S|/|C| · [(1-ε)² + ε² Σ_{j≠i∈S} P²(y=j)]`.
pub fn lemma2_bound(epsilon: f64, affected: &[usize], noise_dist: &[f64], c: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(validation(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut in_s = vec![false; c];
    for &s in affected {
        if s >= c {
            return Err(validation(format!("affected class {s} out of range")));
        }
        if std::mem::replace(&mut in_s[s], true) {
            return Err(validation(format!("affected class {s} listed twice")));
        }
    }
    if affected.is_empty() {
        return Ok(1.0);
    }
    check_distribution(noise_dist, c)?;
    if noise_dist.iter().enumerate().any(|(j, &p)| p > 0.0 && !in_s[j]) {
        return Err(validation("noise distribution is not supported on the affected set"));
    }
    let keep = (1.0 - epsilon).powi(2);
    let per_class: f64 = affected
        .iter()
        .map(|&i| keep + epsilon * epsilon * off_diagonal_square_sum(noise_dist, i))
        .sum::<f64>()
        / affected.len() as f64;
    let (u, s) = ((c - affected.len()) as f64, affected.len() as f64);
    Ok(u / c as f64 + s / c as f64 * per_class)
}

/// Accuracy bound as a function of the noise ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub family: String,
    pub epsilons: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl BoundCurve {
    /// `(epsilon, accuracy)` at the smallest accuracy; ties go to the smaller epsilon.
    pub fn minimum(&self) -> Option<(f64, f64)> {
        self.epsilons
            .iter()
            .copied()
            .zip(self.accuracies.iter().copied())
            .fold(None, |best, (e, a)| match best {
                Some((_, ba)) if ba <= a => best,
                _ => Some((e, a)),
            })
    }

    pub fn accuracy_at(&self, epsilon: f64) -> Option<f64> {
        self.epsilons
            .iter()
            .position(|e| (e - epsilon).abs() < 1e-12)
            .map(|i| self.accuracies[i])
    }

    /// Writes `epsilon,accuracy` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,accuracy")?;
        for (e, a) in self.epsilons.iter().zip(&self.accuracies) {
            writeln!(out, "{e},{a}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Result of [`bound_sweep`]: the curve over feasible points plus the
/// points that were dropped and why.
#[derive(Debug, Clone)]
pub struct BoundSweep {
    pub curve: BoundCurve,
    pub infeasible: Vec<(f64, String)>,
}

/// The grid `0.0, 0.1, …, 1.0`.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Evaluates [`general_bound`] over a grid of noise ratios.
///
/// Parametric families are rebuilt at each epsilon; a `Custom` matrix is
/// rescaled with [`rescale_transition`]. Points where the family cannot be
/// realized are skipped and reported.
pub fn bound_sweep(
    family: &NoiseSpec,
    epsilons: &[f64],
    c: usize,
    prior: &ClassPrior,
) -> Result<BoundSweep> {
    let mut curve = BoundCurve {
        family: family.family().to_string(),
        epsilons: Vec::new(),
        accuracies: Vec::new(),
    };
    let mut infeasible = Vec::new();
    for &eps in epsilons {
        match transition_at(family, eps, c, prior) {
            Ok(t) => {
                curve.epsilons.push(eps);
                curve.accuracies.push(general_bound(&t, prior)?);
            }
            Err(e @ (Error::InfeasibleScale(_) | Error::ZeroNoise | Error::Validation(_))) => {
                infeasible.push((eps, e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    if curve.epsilons.is_empty() {
        return Err(Error::EmptyFeasibleSet);
    }
    Ok(BoundSweep { curve, infeasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::build_transition;
    use approx::assert_abs_diff_eq;

    fn sym(eps: f64, c: usize) -> TransitionMatrix {
        build_transition(&NoiseSpec::Symmetric { epsilon: eps }, c).unwrap()
    }

    #[test]
    fn general_bound_examples() {
        let u10 = ClassPrior::uniform(10);
        assert_eq!(general_bound(&TransitionMatrix::identity(10), &u10).unwrap(), 1.0);
        // 0.6² + 9·(0.4/9)²
        let want = 0.36 + 9.0 * (0.4f64 / 9.0).powi(2);
        assert_abs_diff_eq!(general_bound(&sym(0.4, 10), &u10).unwrap(), want, epsilon = 1e-15);
        assert_abs_diff_eq!(want, 0.377778, epsilon = 1e-6);
        let half = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(general_bound(&half, &ClassPrior::uniform(2)).unwrap(), 0.5);
        assert!(general_bound(&half, &u10).is_err());
    }

    #[test]
    fn lemma1_examples() {
        let uniform = vec![0.1; 10];
        assert_eq!(lemma1_bound(0.0, &uniform, 10).unwrap(), 1.0);
        assert_abs_diff_eq!(
            lemma1_bound(0.4, &uniform, 10).unwrap(),
            0.36 + 0.16 / 9.0,
            epsilon = 1e-15
        );
        let mut point = vec![0.0; 10];
        point[3] = 1.0;
        assert_abs_diff_eq!(lemma1_bound(1.0, &point, 10).unwrap(), 1.0, epsilon = 1e-15);
        assert!(lemma1_bound(0.4, &[0.5, 0.4], 2).is_err());
        assert!(lemma1_bound(1.2, &uniform, 10).is_err());
    }

    #[test]
    fn lemma2_examples() {
        let mut point = vec![0.0; 10];
        point[2] = 1.0;
        let s = [2, 3, 4, 5, 9];
        assert_eq!(lemma2_bound(0.7, &[], &point, 10).unwrap(), 1.0);
        assert_abs_diff_eq!(lemma2_bound(0.5, &s, &point, 10).unwrap(), 0.75, epsilon = 1e-15);
        let all: Vec<usize> = (0..10).collect();
        let l2 = lemma2_bound(0.4, &all, &point, 10).unwrap();
        assert_abs_diff_eq!(l2, 0.52, epsilon = 1e-15);
        assert_abs_diff_eq!(l2, lemma1_bound(0.4, &point, 10).unwrap(), epsilon = 1e-15);
        let mut outside = vec![0.0; 10];
        outside[0] = 1.0;
        assert!(lemma2_bound(0.5, &s, &outside, 10).is_err());
    }

    #[test]
    fn symmetric_sweep() {
        let sweep = bound_sweep(
            &NoiseSpec::Symmetric { epsilon: 0.0 },
            &[0.0, 0.5, 1.0],
            10,
            &ClassPrior::uniform(10),
        )
        .unwrap();
        let acc = &sweep.curve.accuracies;
        assert_eq!(acc[0], 1.0);
        assert_abs_diff_eq!(acc[1], 0.25 + 0.25 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(acc[2], 1.0 / 9.0, epsilon = 1e-15);
        assert!(sweep.infeasible.is_empty());
    }

    #[test]
    fn custom_sweep_reports_infeasible_points() {
        let t = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.95, 0.05]]).unwrap();
        let sweep = bound_sweep(
            &NoiseSpec::Custom { matrix: t.clone() },
            &[0.0, 0.5, 1.0],
            2,
            &ClassPrior::uniform(2),
        )
        .unwrap();
        assert_eq!(sweep.curve.epsilons, vec![0.0, 0.5]);
        assert_eq!(sweep.curve.accuracies[0], 1.0);
        assert_eq!(sweep.infeasible.len(), 1);
        assert_eq!(sweep.infeasible[0].0, 1.0);

        let none = bound_sweep(&NoiseSpec::Custom { matrix: t }, &[1.0], 2, &ClassPrior::uniform(2));
        assert!(matches!(none, Err(Error::EmptyFeasibleSet)));
    }

    #[test]
    fn csv_output() {
        let curve = BoundCurve {
            family: "symmetric".into(),
            epsilons: vec![0.0, 0.5],
            accuracies: vec![1.0, 0.25],
        };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epsilon,accuracy\n0,1\n0.5,0.25\n");
        assert_eq!(curve.minimum(), Some((0.5, 0.25)));
    }
}
