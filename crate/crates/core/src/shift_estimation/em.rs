//! Maximum-likelihood target priors: the EM fixed-point iteration and a
//! projected-gradient maximizer of the same concave objective.

use serde::Serialize;

use super::{check_priors, weights_from_priors, ShiftWeights, PRIOR_EPSILON};
use crate::error::{Error, Result};
use crate::numerics::{project_unchecked, ProbMatrix, SimplexVector};

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Stop once `‖q⁽ˢ⁺¹⁾ − q⁽ˢ⁾‖₁` is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DirectOptions {
    /// Stop once a projected step moves `q` by at most this in L1.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions {
            tol: 1e-13,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmResult {
    pub target_priors: SimplexVector,
    pub weights: ShiftWeights,
    pub iterations: usize,
    /// Objective at `target_priors`, without the constant term.
    pub final_log_likelihood: f64,
    pub converged: bool,
    /// Objective at `q⁽⁰⁾, q⁽¹⁾, ...`; the last entry equals
    /// `final_log_likelihood`.
    pub log_likelihood_trace: Vec<f64>,
    /// Classes left out because their source prior is below
    /// [`PRIOR_EPSILON`]; they get prior and weight zero.
    pub excluded_classes: Vec<usize>,
}

/// Classes with usable source priors.
struct Reduced {
    active: Vec<usize>,
    excluded: Vec<usize>,
    inv_prior: Vec<f64>,
}

impl Reduced {
    fn new(target_probs: &ProbMatrix, source_priors: &SimplexVector) -> Result<Self> {
        if target_probs.rows() == 0 {
            return Err(Error::invalid("target predictions are empty"));
        }
        check_priors(source_priors.as_slice(), target_probs, source_priors)?;
        let (active, excluded): (Vec<usize>, Vec<usize>) =
            (0..source_priors.len()).partition(|&i| source_priors[i] >= PRIOR_EPSILON);
        if active.is_empty() {
            return Err(Error::invalid("every source prior is below the positivity threshold"));
        }
        let inv_prior = source_priors.as_slice().iter().map(|&p| 1.0 / p).collect();
        Ok(Reduced {
            active,
            excluded,
            inv_prior,
        })
    }

    /// Row likelihoods `Σ_i (p_ki / p_i) q_i` summed in log, plus the
    /// gradient `Σ_k (p_ki / p_i) / d_k` when requested.
    fn evaluate(&self, q: &[f64], probs: &ProbMatrix, grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for row in probs.iter_rows() {
            let d: f64 = self.active.iter().map(|&i| row[i] * self.inv_prior[i] * q[i]).sum();
            total += d.ln();
            if let Some(g) = grad.as_deref_mut() {
                if d > 0.0 {
                    for &i in &self.active {
                        g[i] += row[i] * self.inv_prior[i] / d;
                    }
                } else {
                    // zero-likelihood row: the objective is -inf, push toward its support
                    for &i in &self.active {
                        g[i] += if row[i] > 0.0 { f64::MAX.sqrt() } else { 0.0 };
                    }
                }
            }
        }
        total
    }

    fn start(&self, source_priors: &SimplexVector) -> Vec<f64> {
        let mut q = vec![0.0; source_priors.len()];
        let mass: f64 = self.active.iter().map(|&i| source_priors[i]).sum();
        for &i in &self.active {
            q[i] = source_priors[i] / mass;
        }
        q
    }

    fn finish(
        self,
        q: Vec<f64>,
        source_priors: &SimplexVector,
        iterations: usize,
        trace: Vec<f64>,
        converged: bool,
    ) -> Result<EmResult> {
        let target_priors = SimplexVector::new(q)?;
        let weights = if self.excluded.is_empty() {
            weights_from_priors(&target_priors, source_priors)?
        } else {
            let mut w = vec![0.0; target_priors.len()];
            for &i in &self.active {
                w[i] = target_priors[i] * self.inv_prior[i];
            }
            ShiftWeights::new(w)?
        };
        Ok(EmResult {
            target_priors,
            weights,
            iterations,
            final_log_likelihood: *trace.last().expect("trace holds the initial value"),
            converged,
            log_likelihood_trace: trace,
            excluded_classes: self.excluded,
        })
    }
}

/// EM estimate of the target priors, initialized at the source priors.
///
/// Each iteration costs `O(mN)`. Non-convergence within `max_iter` is
/// reported through [`EmResult::converged`], not as an error.
pub fn em_estimate(target_probs: &ProbMatrix, source_priors: &SimplexVector, opts: &EmOptions) -> Result<EmResult> {
    let reduced = Reduced::new(target_probs, source_priors)?;
    let m = source_priors.len();
    let n = target_probs.rows() as f64;
    let mut q = reduced.start(source_priors);
    let mut trace = Vec::new();
    let mut next = vec![0.0; m];
    let mut ratio = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        for &i in &reduced.active {
            ratio[i] = q[i] * reduced.inv_prior[i];
        }
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut log_lik = 0.0;
        // E-step, accumulated straight into the M-step sums
        for row in target_probs.iter_rows() {
            let d: f64 = reduced.active.iter().map(|&i| ratio[i] * row[i]).sum();
            log_lik += d.ln();
            if d > 0.0 {
                for &i in &reduced.active {
                    next[i] += ratio[i] * row[i] / d;
                }
            }
        }
        trace.push(log_lik);
        let mass: f64 = next.iter().sum();
        let scale = if mass > 0.0 { 1.0 / mass } else { 1.0 / n };
        next.iter_mut().for_each(|v| *v *= scale);
        let delta: f64 = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut q, &mut next);
        if delta <= opts.tol {
            converged = true;
            break;
        }
    }
    trace.push(reduced.evaluate(&q, target_probs, None));
    reduced.finish(q, source_priors, iterations, trace, converged)
}

/// Maximizes the same objective as [`em_estimate`] by projected gradient
/// ascent on the simplex with backtracking.
pub fn ml_estimate_direct(
    target_probs: &ProbMatrix,
    source_priors: &SimplexVector,
    opts: &DirectOptions,
) -> Result<EmResult> {
    let reduced = Reduced::new(target_probs, source_priors)?;
    let m = source_priors.len();
    let mut q = reduced.start(source_priors);
    let mut grad = vec![0.0; m];
    let mut value = reduced.evaluate(&q, target_probs, Some(&mut grad));
    let mut trace = vec![value];
    let mut step = 1.0 / grad.iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1.0);
    let mut iterations = 0;
    let mut converged = false;

    let project = |v: &[f64]| -> Vec<f64> {
        let sub: Vec<f64> = reduced.active.iter().map(|&i| v[i]).collect();
        let projected = project_unchecked(&sub);
        let mut out = vec![0.0; m];
        for (&i, p) in reduced.active.iter().zip(projected) {
            out[i] = p;
        }
        out
    };

    let mut trial_grad = vec![0.0; m];
    'outer: while iterations < opts.max_iter {
        iterations += 1;
        loop {
            let ahead: Vec<f64> = q.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
            let trial = project(&ahead);
            let moved: Vec<f64> = trial.iter().zip(&q).map(|(a, b)| a - b).collect();
            let dist1: f64 = moved.iter().map(|d| d.abs()).sum();
            if dist1 <= opts.tol {
                converged = true;
                break 'outer;
            }
            let linear: f64 = moved.iter().zip(&grad).map(|(d, g)| d * g).sum();
            let sq: f64 = moved.iter().map(|d| d * d).sum();
            let trial_value = reduced.evaluate(&trial, target_probs, Some(&mut trial_grad));
            if trial_value.is_finite() && trial_value >= value + linear - sq / (2.0 * step) && trial_value >= value {
                q = trial;
                value = trial_value;
                std::mem::swap(&mut grad, &mut trial_grad);
                trace.push(value);
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                // no representable ascent step left
                converged = true;
                break 'outer;
            }
        }
    }
    if trace.last() != Some(&value) {
        trace.push(value);
    }
    reduced.finish(q, source_priors, iterations, trace, converged)
}
