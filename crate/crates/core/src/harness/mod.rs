//! Data files, experiment configuration, seeded trials and reports.

pub mod config;
pub mod dataset;
pub mod report;
pub mod rng;
pub mod trial;

pub use config::{DatasetSource, EmConfig, Estimator, ExperimentConfig, RllsConfig};
pub use dataset::{load_dataset, load_logits, write_dataset, DatasetFormat};
pub use report::{read_records_csv, summarize, write_report, ReportFormat, SummaryCell, SummaryMetric};
pub use trial::{run_experiment, run_trial, Experiment, ExperimentResult, TrialRecord};
