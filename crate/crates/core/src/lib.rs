//! Label-shift estimation and calibration for classifier logits.
//!
//! Calibrate a source classifier on labelled validation logits, estimate
//! target class priors (EM, BBSL, RLLS), reweight target predictions, and run
//! simulated-shift experiments.

pub mod calibration;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub(crate) mod optimize;
pub mod shift_estimation;
pub mod shift_simulation;

pub use calibration::{
    apply_calibration, fit_calibration, CalibrationFamily, CalibrationFit, CalibrationParams, FitOptions,
    LabeledLogitSet,
};
pub use error::{Error, Result};
pub use numerics::{Matrix, ProbMatrix, SimplexVector};
pub use optimize::StopReason;
pub use shift_estimation::{
    adapt_predictions, bbsl_estimate, em_estimate, estimate_source_priors, rlls_estimate, EmOptions, EmResult,
    PredictionMode, RllsOptions, ShiftWeights, SourcePriorMode,
};
