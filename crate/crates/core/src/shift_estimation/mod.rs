//! Target-prior and importance-weight estimation under label shift.
//!
//! Maximum likelihood ([`em_estimate`], [`ml_estimate_direct`]) works on
//! calibrated target predictions and source priors; the moment-matching
//! baselines ([`bbsl_estimate`], [`rlls_estimate`]) work from a held-out
//! confusion matrix.

mod em;
mod moments;

use serde::{Deserialize, Serialize};

pub use em::{em_estimate, ml_estimate_direct, DirectOptions, EmOptions, EmResult};
pub use moments::{
    bbsl_estimate, bbsl_solve, confusion_matrix, rlls_estimate, rlls_solve, target_moments, BbslSolution,
    PredictionMode, RllsEstimate, RllsOptions, SINGULAR_CONDITION,
};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ProbMatrix, SimplexVector};

/// Smallest source prior treated as a present class.
pub const PRIOR_EPSILON: f64 = 1e-8;

/// Per-class ratios `q_i / p_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ShiftWeights(Vec<f64>);

impl ShiftWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weights must be non-empty"));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(format!(
                "weight {i} is {} (must be finite and >= 0)",
                w[i]
            )));
        }
        Ok(ShiftWeights(w))
    }

    pub fn ones(m: usize) -> Self {
        ShiftWeights(vec![1.0; m])
    }

    /// Clamps negative entries to zero.
    pub fn clipped(raw: &[f64]) -> Result<Self> {
        ShiftWeights::new(raw.iter().map(|&x| x.max(0.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'de> Deserialize<'de> for ShiftWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ShiftWeights::new(Vec::<f64>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourcePriorMode {
    /// Column means of the calibrated validation predictions.
    MeanPrediction,
    /// Empirical validation label frequencies.
    LabelFrequency,
}

impl std::str::FromStr for SourcePriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "meanprediction" => Ok(SourcePriorMode::MeanPrediction),
            "labelfrequency" => Ok(SourcePriorMode::LabelFrequency),
            _ => Err(Error::invalid(format!("unknown source prior mode '{s}'"))),
        }
    }
}

pub fn estimate_source_priors(
    valid_probs: &ProbMatrix,
    mode: SourcePriorMode,
    labels: Option<&[usize]>,
) -> Result<SimplexVector> {
    match mode {
        SourcePriorMode::MeanPrediction => SimplexVector::new(valid_probs.mean_row()),
        SourcePriorMode::LabelFrequency => {
            let labels = labels.ok_or_else(|| Error::invalid("label-frequency source priors need labels"))?;
            label_frequencies(labels, valid_probs.classes())
        }
    }
}

/// Empirical class frequencies of `labels` over `m` classes.
pub fn label_frequencies(labels: &[usize], m: usize) -> Result<SimplexVector> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot compute frequencies of an empty label set"));
    }
    let mut counts = vec![0.0; m];
    for (k, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::Validation {
                row: k,
                message: format!("label {y} out of range for {m} classes"),
            });
        }
        counts[y] += 1.0;
    }
    let n = labels.len() as f64;
    SimplexVector::new(counts.into_iter().map(|c| c / n).collect())
}

fn check_priors(q: &[f64], target_probs: &ProbMatrix, source_priors: &SimplexVector) -> Result<()> {
    let m = target_probs.classes();
    if q.len() != m || source_priors.len() != m {
        return Err(Error::invalid(format!(
            "dimension mismatch: q has {}, priors {}, predictions {m} classes",
            q.len(),
            source_priors.len()
        )));
    }
    Ok(())
}

/// `Σ_k log Σ_i (p_ki / p_i) q_i`, the label-shift log-likelihood without
/// the constant `Σ_k log p(x_k)`. Returns `-inf` if some row has zero
/// likelihood.
pub fn shift_log_likelihood(
    q: &SimplexVector,
    target_probs: &ProbMatrix,
    source_priors: &SimplexVector,
) -> Result<f64> {
    check_priors(q.as_slice(), target_probs, source_priors)?;
    if let Some(i) = source_priors.as_slice().iter().position(|&p| p < PRIOR_EPSILON) {
        return Err(Error::invalid(format!(
            "source prior of class {i} is {} (< {PRIOR_EPSILON})",
            source_priors[i]
        )));
    }
    let ratio: Vec<f64> = q
        .as_slice()
        .iter()
        .zip(source_priors.as_slice())
        .map(|(qi, pi)| qi / pi)
        .collect();
    Ok(log_likelihood_with_ratio(&ratio, target_probs))
}

/// `Σ_k log Σ_i ratio_i p_ki`.
pub(crate) fn log_likelihood_with_ratio(ratio: &[f64], target_probs: &ProbMatrix) -> f64 {
    target_probs
        .iter_rows()
        .map(|row| row.iter().zip(ratio).map(|(p, r)| p * r).sum::<f64>().ln())
        .sum()
}

/// `w_i = q_i / p_i`.
pub fn weights_from_priors(q: &SimplexVector, p: &SimplexVector) -> Result<ShiftWeights> {
    if q.len() != p.len() {
        return Err(Error::invalid("prior vectors differ in length"));
    }
    if let Some(i) = p.as_slice().iter().position(|&x| x < PRIOR_EPSILON) {
        return Err(Error::invalid(format!(
            "source prior of class {i} is below {PRIOR_EPSILON}"
        )));
    }
    ShiftWeights::new(q.as_slice().iter().zip(p.as_slice()).map(|(a, b)| a / b).collect())
}

/// Reweights each row by `w` and renormalizes.
pub fn adapt_predictions(probs: &ProbMatrix, weights: &ShiftWeights) -> Result<ProbMatrix> {
    let m = probs.classes();
    if weights.len() != m {
        return Err(Error::invalid(format!("{} weights for {m} classes", weights.len())));
    }
    if !weights.as_slice().iter().any(|&w| w > 0.0) {
        return Err(Error::invalid("at least one weight must be positive"));
    }
    let w = weights.as_slice();
    let mut out = Matrix::zeros(probs.rows(), m);
    for (k, row) in probs.iter_rows().enumerate() {
        let dst = out.row_mut(k);
        let mut total = 0.0;
        for i in 0..m {
            dst[i] = w[i] * row[i];
            total += dst[i];
        }
        if total.is_nan() || total <= 0.0 {
            return Err(Error::DegenerateRow { row: k });
        }
        dst.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ProbMatrix::from_matrix_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sv(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn source_prior_examples() {
        let probs = ProbMatrix::from_rows(&[[0.6, 0.4], [0.4, 0.6]]).unwrap();
        let p = estimate_source_priors(&probs, SourcePriorMode::MeanPrediction, None).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let probs = ProbMatrix::from_rows(&[[0.5, 0.5]; 5]).unwrap();
        let p = estimate_source_priors(&probs, SourcePriorMode::LabelFrequency, Some(&[0, 0, 1, 1, 1])).unwrap();
        assert_relative_eq!(p[0], 0.4);
        assert_relative_eq!(p[1], 0.6);

        let probs = ProbMatrix::from_rows(&[[0.9, 0.1], [0.7, 0.3], [0.5, 0.5]]).unwrap();
        let p = estimate_source_priors(&probs, SourcePriorMode::MeanPrediction, None).unwrap();
        assert_relative_eq!(p[0], 0.7, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.3, epsilon = 1e-15);

        assert!(estimate_source_priors(&probs, SourcePriorMode::LabelFrequency, None).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let probs = ProbMatrix::from_rows(&[[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]).unwrap();
        let p = sv(&[0.3, 0.7]);
        assert_relative_eq!(shift_log_likelihood(&p, &probs, &p).unwrap(), 0.0, epsilon = 1e-15);

        let half = sv(&[0.5, 0.5]);
        let vertex = sv(&[1.0, 0.0]);
        let row = ProbMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_relative_eq!(
            shift_log_likelihood(&vertex, &row, &half).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        let row = ProbMatrix::from_rows(&[[0.8, 0.2]]).unwrap();
        assert_relative_eq!(
            shift_log_likelihood(&vertex, &row, &half).unwrap(),
            1.6f64.ln(),
            epsilon = 1e-15
        );

        let zero = ProbMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(shift_log_likelihood(&vertex, &zero, &half).unwrap(), f64::NEG_INFINITY);

        let tiny = sv(&[1.0 - 1e-9, 1e-9]);
        assert!(shift_log_likelihood(&vertex, &row, &tiny).is_err());
    }

    #[test]
    fn weights_examples() {
        let p = sv(&[0.5, 0.5]);
        assert_eq!(weights_from_priors(&p, &p).unwrap().as_slice(), &[1.0, 1.0]);
        let w = weights_from_priors(&sv(&[0.7, 0.3]), &p).unwrap();
        assert_relative_eq!(w.as_slice()[0], 1.4, epsilon = 1e-15);
        assert_relative_eq!(w.as_slice()[1], 0.6, epsilon = 1e-15);
        assert_eq!(
            weights_from_priors(&sv(&[1.0, 0.0]), &p).unwrap().as_slice(),
            &[2.0, 0.0]
        );
        assert!(weights_from_priors(&p, &sv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn adapt_examples() {
        let probs = ProbMatrix::from_rows(&[[0.5, 0.5], [0.1, 0.9]]).unwrap();
        assert_eq!(adapt_predictions(&probs, &ShiftWeights::ones(2)).unwrap(), probs);

        let one = ProbMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let out = adapt_predictions(&one, &ShiftWeights::new(vec![2.0, 0.5]).unwrap()).unwrap();
        assert_relative_eq!(out.row(0)[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(out.row(0)[1], 0.2, epsilon = 1e-15);

        let hot = ProbMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let out = adapt_predictions(&hot, &ShiftWeights::new(vec![0.3, 7.0]).unwrap()).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0]);

        let err = adapt_predictions(&probs.select_rows(&[0, 1]), &ShiftWeights::new(vec![1.0, 0.0]).unwrap());
        assert!(err.is_ok());
        let err = adapt_predictions(
            &ProbMatrix::from_rows(&[[0.5, 0.5], [0.0, 1.0]]).unwrap(),
            &ShiftWeights::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 1 }));
    }

    #[test]
    fn adapt_with_inverse_ratios_round_trips() {
        let probs = ProbMatrix::from_rows(&[[0.2, 0.3, 0.5], [0.6, 0.3, 0.1], [0.05, 0.9, 0.05]]).unwrap();
        let q = sv(&[0.6, 0.1, 0.3]);
        let p = sv(&[0.3, 0.3, 0.4]);
        let there = adapt_predictions(&probs, &weights_from_priors(&q, &p).unwrap()).unwrap();
        let back = adapt_predictions(&there, &weights_from_priors(&p, &q).unwrap()).unwrap();
        for (a, b) in back.matrix().as_slice().iter().zip(probs.matrix().as_slice()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
