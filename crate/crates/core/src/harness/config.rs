//! Experiment configuration, read from JSON with these field names.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::DatasetFormat;
use crate::calibration::CalibrationFamily;
use crate::error::{Error, Result};
use crate::shift_estimation::{DirectOptions, EmOptions, PredictionMode, RllsOptions, SourcePriorMode};
use crate::shift_simulation::{ShiftKind, SyntheticTaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "EM")]
    Em,
    #[serde(rename = "EM-direct")]
    EmDirect,
    #[serde(rename = "BBSL-hard")]
    BbslHard,
    #[serde(rename = "BBSL-soft")]
    BbslSoft,
    #[serde(rename = "RLLS-hard")]
    RllsHard,
    #[serde(rename = "RLLS-soft")]
    RllsSoft,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Em,
        Estimator::EmDirect,
        Estimator::BbslHard,
        Estimator::BbslSoft,
        Estimator::RllsHard,
        Estimator::RllsSoft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Em => "EM",
            Estimator::EmDirect => "EM-direct",
            Estimator::BbslHard => "BBSL-hard",
            Estimator::BbslSoft => "BBSL-soft",
            Estimator::RllsHard => "RLLS-hard",
            Estimator::RllsSoft => "RLLS-soft",
        }
    }

    /// Hard/Soft mode of the moment-matching estimators.
    pub fn prediction_mode(self) -> Option<PredictionMode> {
        match self {
            Estimator::BbslHard | Estimator::RllsHard => Some(PredictionMode::Hard),
            Estimator::BbslSoft | Estimator::RllsSoft => Some(PredictionMode::Soft),
            Estimator::Em | Estimator::EmDirect => None,
        }
    }

    pub fn is_likelihood_based(self) -> bool {
        matches!(self, Estimator::Em | Estimator::EmDirect)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Labelled validation and test logits on disk.
    Files {
        valid: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<DatasetFormat>,
    },
    /// Validation set and test pool drawn from a synthetic task.
    Synthetic {
        spec: SyntheticTaskSpec,
        n_valid: usize,
        n_test: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RllsConfig {
    pub lambda: f64,
    pub delta: f64,
}

impl Default for RllsConfig {
    fn default() -> Self {
        let d = RllsOptions::default();
        RllsConfig {
            lambda: d.lambda,
            delta: d.delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        let d = EmOptions::default();
        EmConfig {
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

fn default_families() -> Vec<CalibrationFamily> {
    CalibrationFamily::ALL.to_vec()
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Em]
}

fn default_prior_mode() -> SourcePriorMode {
    SourcePriorMode::MeanPrediction
}

fn default_ece_bins() -> usize {
    crate::metrics::ECE_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_families")]
    pub calibration_families: Vec<CalibrationFamily>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_prior_mode")]
    pub source_prior_mode: SourcePriorMode,
    pub shift_grid: Vec<ShiftKind>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub rlls: RllsConfig,
    #[serde(default)]
    pub em: EmConfig,
    /// Subsample validation data per class in proportion to class counts.
    #[serde(default)]
    pub stratified_validation: bool,
    /// Also reweight predictions with BBSL/RLLS weights to get Δ-accuracy.
    #[serde(default)]
    pub adapt_baselines: bool,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        // relative dataset paths are taken from the config's directory
        if let (DatasetSource::Files { valid, test, .. }, Some(dir)) = (&mut config.dataset, path.parent()) {
            for p in [valid, test] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        for (name, empty) in [
            ("calibration_families", self.calibration_families.is_empty()),
            ("estimators", self.estimators.is_empty()),
            ("shift_grid", self.shift_grid.is_empty()),
            ("n_grid", self.n_grid.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(format!("{name} must not be empty")));
            }
        }
        if self.n_grid.contains(&0) {
            return Err(Error::invalid("sample sizes in n_grid must be positive"));
        }
        if self.ece_bins == 0 {
            return Err(Error::invalid("ece_bins must be at least 1"));
        }
        if self.em.tol.is_nan() || self.em.tol <= 0.0 || self.em.max_iter == 0 {
            return Err(Error::invalid("em.tol must be positive and em.max_iter at least 1"));
        }
        if !(self.rlls.lambda.is_finite() && self.rlls.lambda >= 0.0) {
            return Err(Error::invalid("rlls.lambda must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.rlls.delta) {
            return Err(Error::invalid("rlls.delta must lie in [0, 1]"));
        }
        if let DatasetSource::Synthetic { spec, n_valid, n_test } = &self.dataset {
            spec.validate()?;
            if *n_valid == 0 || *n_test == 0 {
                return Err(Error::invalid("synthetic n_valid and n_test must be positive"));
            }
            for kind in &self.shift_grid {
                kind.validate(spec.classes)?;
            }
        }
        Ok(())
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            tol: self.em.tol,
            max_iter: self.em.max_iter,
        }
    }

    pub fn direct_options(&self) -> DirectOptions {
        DirectOptions::default()
    }

    pub fn rlls_options(&self) -> RllsOptions {
        RllsOptions {
            lambda: self.rlls.lambda,
            delta: self.rlls.delta,
            ..RllsOptions::default()
        }
    }

    /// Grid cells in report order: shift-major, then sample size.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.shift_grid.len())
            .flat_map(|s| (0..self.n_grid.len()).map(move |n| (s, n)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"files": {"valid": "v.csv", "test": "t.csv"}},
        "shift_grid": [{"dirichlet": {"alpha": 0.1}}, {"tweak_one": {"class_index": 3, "rho": 0.9}}],
        "n_grid": [100],
        "trials": 2
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.calibration_families.len(), 5);
        assert_eq!(c.estimators, vec![Estimator::Em]);
        assert_eq!(c.source_prior_mode, SourcePriorMode::MeanPrediction);
        assert_eq!(c.ece_bins, 15);
        assert!(!c.stratified_validation);
        assert_eq!(c.cells(), vec![(0, 0), (1, 0)]);
        let again = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let zero_trials = MINIMAL.replace("\"trials\": 2", "\"trials\": 0");
        assert!(ExperimentConfig::from_json(&zero_trials).is_err());
        let empty_grid = MINIMAL.replace("\"n_grid\": [100]", "\"n_grid\": []");
        assert!(ExperimentConfig::from_json(&empty_grid).is_err());
        let typo = MINIMAL.replace("\"trials\"", "\"trails\"");
        assert!(ExperimentConfig::from_json(&typo).is_err());
    }

    #[test]
    fn estimator_names() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{}\"", e.name()));
        }
    }
}
