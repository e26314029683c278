//! Seeded trials over the shift × sample-size grid.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, Estimator, ExperimentConfig};
use super::dataset::{load_dataset, DatasetFormat};
use super::report::{summarize_all, SummaryCell};
use super::rng::cell_rng;
use crate::calibration::{apply_calibration, fit_calibration, CalibrationFamily, FitOptions, LabeledLogitSet};
use crate::error::{Error, Result};
use crate::metrics;
use crate::numerics::{ProbMatrix, SimplexVector};
use crate::shift_estimation::{
    adapt_predictions, bbsl_estimate, em_estimate, estimate_source_priors, label_frequencies, ml_estimate_direct,
    rlls_estimate, EmResult, ShiftWeights, PRIOR_EPSILON,
};
use crate::shift_simulation::{generate_synthetic_task, resample_with, ShiftKind};

/// One (trial, shift, n, family, estimator) outcome. Metrics are `None`
/// when the estimator failed; `flags` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub shift: String,
    pub n: usize,
    pub estimator: Estimator,
    pub calibration: CalibrationFamily,
    /// Realized target label frequencies over validation-subsample label
    /// frequencies.
    pub true_weights: Vec<f64>,
    pub estimated_weights: Option<Vec<f64>>,
    pub mse: Option<f64>,
    /// MSE against the nominal (drawn) priors instead of the realized ones.
    pub mse_nominal: Option<f64>,
    /// Accuracy gain in percentage points over uncalibrated, unadapted
    /// target predictions.
    pub delta_acc: Option<f64>,
    /// Calibration metrics on the unshifted test pool.
    pub nll_unshifted: f64,
    pub ece_unshifted: f64,
    /// JS divergence between mean calibrated prediction and label
    /// frequencies on the unshifted test pool.
    pub js_bias: f64,
    pub em_iterations: Option<usize>,
    pub flags: Vec<String>,
}

/// A validated configuration with its data loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub valid: LabeledLogitSet,
    pub test: LabeledLogitSet,
}

impl Experiment {
    /// Loads data and checks every grid cell can be run.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (valid, test) = match &config.dataset {
            DatasetSource::Files { valid, test, format } => {
                let fmt = |p: &std::path::Path| format.unwrap_or_else(|| DatasetFormat::from_path(p));
                (load_dataset(valid, fmt(valid))?, load_dataset(test, fmt(test))?)
            }
            DatasetSource::Synthetic { spec, n_valid, n_test } => {
                let task = generate_synthetic_task(spec, *n_valid, *n_test)?;
                (task.valid.set, task.pool.set)
            }
        };
        Self::from_data(config, valid, test)
    }

    pub fn from_data(config: ExperimentConfig, valid: LabeledLogitSet, test: LabeledLogitSet) -> Result<Self> {
        config.validate()?;
        let m = valid.classes();
        if test.classes() != m {
            return Err(Error::invalid(format!(
                "validation data has {m} classes but test data has {}",
                test.classes()
            )));
        }
        if let Some(&n) = config.n_grid.iter().find(|&&n| n > valid.len()) {
            return Err(Error::invalid(format!(
                "sample size {n} exceeds the {} validation examples",
                valid.len()
            )));
        }
        let counts = test.label_counts();
        for kind in &config.shift_grid {
            kind.validate(m)?;
            let needed: Vec<usize> = match kind {
                ShiftKind::Explicit { priors } => (0..m).filter(|&i| priors[i] > 0.0).collect(),
                ShiftKind::TweakOne { class_index, rho } if *rho >= 1.0 => vec![*class_index],
                ShiftKind::TweakOne { class_index, rho } if *rho <= 0.0 => {
                    (0..m).filter(|i| i != class_index).collect()
                }
                _ => (0..m).collect(),
            };
            if let Some(&class) = needed.iter().find(|&&i| counts[i] == 0) {
                return Err(Error::UnsatisfiableShift { class });
            }
        }
        Ok(Experiment { config, valid, test })
    }

    pub fn classes(&self) -> usize {
        self.valid.classes()
    }

    /// Records for one trial, in grid order.
    pub fn run_trial(&self, trial_index: usize) -> Result<Vec<TrialRecord>> {
        let mut out = Vec::new();
        for (cell, &(s, n)) in self.config.cells().iter().enumerate() {
            out.extend(self.run_cell(trial_index, cell, s, n)?);
        }
        Ok(out)
    }

    fn subsample_validation<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> LabeledLogitSet {
        if !self.config.stratified_validation {
            return self.valid.select(&index::sample(rng, self.valid.len(), n).into_vec());
        }
        let m = self.classes();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (k, &y) in self.valid.labels().iter().enumerate() {
            by_class[y].push(k);
        }
        let total = self.valid.len() as f64;
        let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * n as f64 / total).collect();
        let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        // largest remainders get the leftover slots
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let mut left = n - take.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if take[i] < by_class[i].len() {
                take[i] += 1;
                left -= 1;
            }
        }
        let mut picked = Vec::with_capacity(n);
        for (members, &k) in by_class.iter().zip(&take) {
            picked.extend(index::sample(rng, members.len(), k).into_iter().map(|j| members[j]));
        }
        self.valid.select(&picked)
    }

    fn run_cell(&self, trial: usize, cell: usize, shift_idx: usize, n_idx: usize) -> Result<Vec<TrialRecord>> {
        let cfg = &self.config;
        let m = self.classes();
        let n = cfg.n_grid[n_idx];
        let kind = &cfg.shift_grid[shift_idx];
        let mut rng = cell_rng(cfg.master_seed, trial as u64, cell as u64);

        let valid = self.subsample_validation(n, &mut rng);
        let nominal = kind.priors(m, &mut rng)?;
        let target = resample_with(&self.test, &nominal, n, &mut rng)?;

        let mut cell_flags = Vec::new();
        let source_freq = label_frequencies(valid.labels(), m)?;
        if source_freq.as_slice().contains(&0.0) {
            cell_flags.push("class_missing_in_validation".to_string());
        }
        let realized = label_frequencies(target.labels(), m)?;
        let true_weights = ratio(&realized, &source_freq);
        let nominal_weights = ratio(&nominal, &source_freq);
        let raw_target = ProbMatrix::softmax_rows(target.logits());
        let pool_freq = label_frequencies(self.test.labels(), m)?;

        let mut records = Vec::new();
        for &family in &cfg.calibration_families {
            let mut flags = cell_flags.clone();
            let fit = fit_calibration(family, &valid, &FitOptions::default())?;
            if !fit.warnings.is_empty() {
                flags.push("calibration_warning".into());
            }
            let params = fit.params;
            let valid_probs = apply_calibration(&params, valid.logits())?;
            let target_probs = apply_calibration(&params, target.logits())?;
            let pool_probs = apply_calibration(&params, self.test.logits())?;
            let nll_unshifted = metrics::nll(&pool_probs, self.test.labels())?;
            let ece_unshifted = metrics::ece(&pool_probs, self.test.labels(), cfg.ece_bins)?;
            let js_bias = metrics::js_divergence(&SimplexVector::new(pool_probs.mean_row())?, &pool_freq)?;
            let source_priors = estimate_source_priors(&valid_probs, cfg.source_prior_mode, Some(valid.labels()))?;

            for &estimator in &cfg.estimators {
                let mut flags = flags.clone();
                let mut em_iterations = None;
                let outcome: Result<ShiftWeights> = match estimator {
                    Estimator::Em | Estimator::EmDirect => {
                        let res: Result<EmResult> = if estimator == Estimator::Em {
                            em_estimate(&target_probs, &source_priors, &cfg.em_options())
                        } else {
                            ml_estimate_direct(&target_probs, &source_priors, &cfg.direct_options())
                        };
                        res.map(|r| {
                            em_iterations = Some(r.iterations);
                            if !r.converged {
                                flags.push("em_not_converged".into());
                            }
                            if !r.excluded_classes.is_empty() {
                                flags.push("classes_excluded".into());
                            }
                            r.weights
                        })
                    }
                    Estimator::BbslHard | Estimator::BbslSoft => {
                        let mode = estimator.prediction_mode().expect("moment estimator");
                        bbsl_estimate(mode, &valid_probs, valid.labels(), &target_probs)
                    }
                    Estimator::RllsHard | Estimator::RllsSoft => {
                        let mode = estimator.prediction_mode().expect("moment estimator");
                        rlls_estimate(mode, &valid_probs, valid.labels(), &target_probs, &cfg.rlls_options()).map(|r| {
                            if !r.converged {
                                flags.push("rlls_not_converged".into());
                            }
                            r.weights
                        })
                    }
                };
                let mut record = TrialRecord {
                    trial_id: trial,
                    shift: kind.label(),
                    n,
                    estimator,
                    calibration: family,
                    true_weights: true_weights.clone(),
                    estimated_weights: None,
                    mse: None,
                    mse_nominal: None,
                    delta_acc: None,
                    nll_unshifted,
                    ece_unshifted,
                    js_bias,
                    em_iterations,
                    flags: Vec::new(),
                };
                match outcome {
                    Ok(weights) => {
                        record.mse = Some(metrics::mse(weights.as_slice(), &true_weights)?);
                        record.mse_nominal = Some(metrics::mse(weights.as_slice(), &nominal_weights)?);
                        if estimator.is_likelihood_based() || cfg.adapt_baselines {
                            match adapt_predictions(&target_probs, &weights) {
                                Ok(adapted) => {
                                    record.delta_acc =
                                        Some(metrics::delta_accuracy(&adapted, &raw_target, target.labels())?)
                                }
                                Err(_) => flags.push("adaptation_failed".into()),
                            }
                        }
                        record.estimated_weights = Some(weights.into_vec());
                    }
                    Err(e) => flags.push(failure_flag(&e).into()),
                }
                record.flags = flags;
                records.push(record);
            }
        }
        Ok(records)
    }
}

fn failure_flag(e: &Error) -> &'static str {
    match e {
        Error::SingularMatrix { .. } => "singular_confusion",
        Error::Numerical { .. } => "numerical_failure",
        Error::DegenerateRow { .. } => "degenerate_row",
        _ => "estimator_failed",
    }
}

/// `a_i / b_i`, with 0 where `b_i` is below the prior floor.
fn ratio(a: &SimplexVector, b: &SimplexVector) -> Vec<f64> {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| if *y < PRIOR_EPSILON { 0.0 } else { x / y })
        .collect()
}

/// Records plus the per-table summary.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryCell>,
}

pub fn run_trial(experiment: &Experiment, trial_index: usize) -> Result<Vec<TrialRecord>> {
    experiment.run_trial(trial_index)
}

/// Runs every (trial, cell) pair in parallel and merges in
/// (trial, grid position) order.
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentResult> {
    let experiment = Experiment::prepare(config)?;
    run_prepared(&experiment)
}

pub fn run_prepared(experiment: &Experiment) -> Result<ExperimentResult> {
    let cells = experiment.config.cells();
    let jobs: Vec<(usize, usize)> = (0..experiment.config.trials)
        .flat_map(|t| (0..cells.len()).map(move |c| (t, c)))
        .collect();
    let chunks: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(t, c)| experiment.run_cell(t, c, cells[c].0, cells[c].1))
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = chunks.into_iter().flatten().collect();
    let summary = summarize_all(&records);
    Ok(ExperimentResult { records, summary })
}
