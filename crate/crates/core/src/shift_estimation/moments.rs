//! Confusion-matrix moment matching: black-box shift estimation and its
//! regularized variant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ShiftWeights;
use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix, ProbMatrix};
use crate::optimize::{self, BoxOptions, StopReason};

/// Confusion matrices with a larger 2-norm condition number are rejected.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionMode {
    /// Argmax class indicators.
    Hard,
    /// Predicted probabilities.
    Soft,
}

/// `C[i][j]` is the joint frequency of prediction `i` and true label `j`
/// on the labelled validation set.
pub fn confusion_matrix(mode: PredictionMode, valid_probs: &ProbMatrix, valid_labels: &[usize]) -> Result<Matrix> {
    let m = valid_probs.classes();
    if valid_probs.rows() == 0 {
        return Err(Error::invalid("validation predictions are empty"));
    }
    if valid_labels.len() != valid_probs.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} prediction rows",
            valid_labels.len(),
            valid_probs.rows()
        )));
    }
    let mut c = Matrix::zeros(m, m);
    let n = valid_probs.rows() as f64;
    for (k, (row, &y)) in valid_probs.iter_rows().zip(valid_labels).enumerate() {
        if y >= m {
            return Err(Error::Validation {
                row: k,
                message: format!("label {y} out of range for {m} classes"),
            });
        }
        match mode {
            PredictionMode::Hard => c.row_mut(argmax(row))[y] += 1.0 / n,
            PredictionMode::Soft => {
                for (i, &p) in row.iter().enumerate() {
                    c.row_mut(i)[y] += p / n;
                }
            }
        }
    }
    Ok(c)
}

/// Predicted-class distribution on the target set, normalized by the
/// number of target samples.
pub fn target_moments(mode: PredictionMode, target_probs: &ProbMatrix) -> Vec<f64> {
    match mode {
        PredictionMode::Soft => target_probs.mean_row(),
        PredictionMode::Hard => {
            let mut u = vec![0.0; target_probs.classes()];
            let n = target_probs.rows() as f64;
            for row in target_probs.iter_rows() {
                u[argmax(row)] += 1.0 / n;
            }
            u
        }
    }
}

#[derive(Debug, Clone)]
pub struct BbslSolution {
    /// Solution of `C w = u` before clipping.
    pub raw: Vec<f64>,
    pub weights: ShiftWeights,
    pub condition: f64,
}

fn to_nalgebra(c: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(c.rows(), c.cols(), c.as_slice())
}

fn condition_number(c: &DMatrix<f64>) -> f64 {
    let sv = c.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Solves `C w = u` and clips negative weights to zero.
pub fn bbsl_solve(confusion: &Matrix, u: &[f64]) -> Result<BbslSolution> {
    let m = confusion.rows();
    if confusion.cols() != m || u.len() != m || m == 0 {
        return Err(Error::invalid(format!(
            "need a square confusion matrix matching u (got {}x{}, u of {})",
            confusion.rows(),
            confusion.cols(),
            u.len()
        )));
    }
    let c = to_nalgebra(confusion);
    let condition = condition_number(&c);
    if condition.is_nan() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularMatrix { condition });
    }
    let raw = c
        .lu()
        .solve(&DVector::from_column_slice(u))
        .ok_or(Error::SingularMatrix { condition })?;
    let raw: Vec<f64> = raw.iter().copied().collect();
    Ok(BbslSolution {
        weights: ShiftWeights::clipped(&raw)?,
        raw,
        condition,
    })
}

fn check_same_classes(valid: &ProbMatrix, target: &ProbMatrix) -> Result<()> {
    if valid.classes() != target.classes() {
        return Err(Error::invalid(format!(
            "validation has {} classes, target {}",
            valid.classes(),
            target.classes()
        )));
    }
    if target.rows() == 0 {
        return Err(Error::invalid("target predictions are empty"));
    }
    Ok(())
}

pub fn bbsl_estimate(
    mode: PredictionMode,
    valid_probs: &ProbMatrix,
    valid_labels: &[usize],
    target_probs: &ProbMatrix,
) -> Result<ShiftWeights> {
    check_same_classes(valid_probs, target_probs)?;
    let c = confusion_matrix(mode, valid_probs, valid_labels)?;
    let u = target_moments(mode, target_probs);
    Ok(bbsl_solve(&c, &u)?.weights)
}

#[derive(Debug, Clone, Copy)]
pub struct RllsOptions {
    pub lambda: f64,
    pub delta: f64,
    pub max_iter: usize,
}

impl Default for RllsOptions {
    fn default() -> Self {
        RllsOptions {
            lambda: 1e-3,
            delta: 1.0,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RllsEstimate {
    pub weights: ShiftWeights,
    /// Minimizer of `‖Cθ − (u − C·1)‖₂ + λ‖θ‖₂` subject to `θ ≥ −1`.
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Smoothing levels for the two Euclidean norms, each warm-starting the
/// next. The last stage is the exact objective, which is smooth at the
/// optimum once both kinks have been ruled out.
const SMOOTHING: [f64; 4] = [1e-2, 1e-4, 1e-6, 0.0];

/// Regularized weights from a confusion matrix and target moments.
pub fn rlls_solve(confusion: &Matrix, u: &[f64], opts: &RllsOptions) -> Result<RllsEstimate> {
    let m = confusion.rows();
    if confusion.cols() != m || u.len() != m || m == 0 {
        return Err(Error::invalid("need a square confusion matrix matching u"));
    }
    if !(opts.lambda.is_finite() && opts.lambda >= 0.0) {
        return Err(Error::invalid("lambda must be finite and >= 0"));
    }
    if !(0.0..=1.0).contains(&opts.delta) {
        return Err(Error::invalid("delta must lie in [0, 1]"));
    }
    let c = to_nalgebra(confusion);
    let condition = condition_number(&c);
    if condition.is_nan() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularMatrix { condition });
    }
    let target = DVector::from_column_slice(u) - &c * DVector::from_element(m, 1.0);
    let ct = c.transpose();
    let lambda = opts.lambda;

    // The objective has kinks at zero residual and at θ = 0; check both
    // by their subgradient conditions before iterating.
    let exact = c
        .clone()
        .lu()
        .solve(&target)
        .ok_or(Error::SingularMatrix { condition })?;
    let (theta, iterations, converged) = if exact.iter().all(|&t| t >= -1.0) && {
        let norm = exact.norm();
        norm == 0.0 || {
            let dual = ct.clone().lu().solve(&(&exact * (lambda / norm)));
            dual.is_some_and(|v| v.norm() <= 1.0)
        }
    } {
        (exact.iter().copied().collect(), 0, true)
    } else if target.norm() == 0.0 || (&ct * &target).norm() <= lambda * target.norm() {
        (vec![0.0; m], 0, true)
    } else {
        let mut theta: Vec<f64> = exact.iter().map(|&t| t.max(-1.0)).collect();
        let mut iterations = 0;
        let mut converged = true;
        for &mu in &SMOOTHING {
            let objective = |th: &[f64]| {
                let t = DVector::from_column_slice(th);
                let resid = &c * &t - &target;
                let rn = (resid.norm_squared() + mu * mu).sqrt();
                let tn = (t.norm_squared() + mu * mu).sqrt();
                let mut grad = DVector::zeros(m);
                if rn > 0.0 {
                    grad += &ct * &resid / rn;
                }
                if tn > 0.0 {
                    grad += &t * (lambda / tn);
                }
                (rn + lambda * tn, grad.iter().copied().collect::<Vec<f64>>())
            };
            let min = optimize::minimize(
                objective,
                theta,
                &BoxOptions {
                    lower: vec![-1.0; m],
                    upper: vec![f64::INFINITY; m],
                    grad_tol: 1e-12,
                    max_iter: opts.max_iter,
                    memory: 10,
                },
            )?;
            iterations += min.iterations;
            theta = min.x;
            converged = min.stop != StopReason::MaxIterations;
        }
        (theta, iterations, converged)
    };
    let w: Vec<f64> = theta.iter().map(|t| 1.0 + opts.delta * t).collect();
    Ok(RllsEstimate {
        weights: ShiftWeights::clipped(&w)?,
        theta,
        iterations,
        converged,
    })
}

pub fn rlls_estimate(
    mode: PredictionMode,
    valid_probs: &ProbMatrix,
    valid_labels: &[usize],
    target_probs: &ProbMatrix,
    opts: &RllsOptions,
) -> Result<RllsEstimate> {
    check_same_classes(valid_probs, target_probs)?;
    let c = confusion_matrix(mode, valid_probs, valid_labels)?;
    let u = target_moments(mode, target_probs);
    rlls_solve(&c, &u, opts)
}
