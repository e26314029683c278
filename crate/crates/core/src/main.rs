use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use labelshift::harness::{
    dataset, load_dataset, load_logits, run_experiment, write_dataset, write_report, DatasetFormat, Estimator,
    ExperimentConfig, ReportFormat,
};
use labelshift::shift_estimation::{
    bbsl_estimate, em_estimate, ml_estimate_direct, rlls_estimate, DirectOptions, EmOptions, RllsOptions,
};
use labelshift::shift_simulation::{generate_synthetic_task, ShiftKind, ShiftSpec, SyntheticTaskSpec};
use labelshift::{
    adapt_predictions, apply_calibration, estimate_source_priors, fit_calibration, CalibrationFamily,
    CalibrationParams, FitOptions, Matrix, ProbMatrix, ShiftWeights, SimplexVector, SourcePriorMode,
};

/// Calibrated label-shift estimation for classifier logits.
#[derive(Parser, Debug)]
#[command(name = "labelshift", version)]
struct Cli {
    /// Seed overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file (experiment config, or a synthetic task for `simulate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; stdout when omitted where possible.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format: csv|jsonl for data, csv|markdown|json|all for reports.
    #[arg(long, global = true)]
    format: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a calibration family on labelled validation logits and save its parameters.
    Calibrate(CalibrateArgs),
    /// Estimate target priors or shift weights from validation and target logits.
    Estimate(EstimateArgs),
    /// Reweight target predictions with shift weights.
    Adapt(AdaptArgs),
    /// Generate a synthetic task (validation set, test pool, optional shifted target).
    Simulate(SimulateArgs),
    /// Run a full experiment grid and write records and summaries.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Labelled validation logits (csv or jsonl).
    #[arg(long)]
    valid: PathBuf,
    /// None, TS, NBVS, BCTS or VS.
    #[arg(long, default_value = "BCTS")]
    family: CalibrationFamily,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Labelled validation logits.
    #[arg(long)]
    valid: PathBuf,
    /// Target logits; labels, if present, are ignored.
    #[arg(long)]
    target: PathBuf,
    /// Calibration parameters from `calibrate`; raw softmax when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// EM, EM-direct, BBSL-hard, BBSL-soft, RLLS-hard or RLLS-soft.
    #[arg(long, default_value = "EM")]
    estimator: Estimator,
    /// mean-prediction or label-frequency.
    #[arg(long, default_value = "mean-prediction")]
    source_priors: SourcePriorMode,
    #[arg(long, default_value_t = RllsOptions::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = RllsOptions::default().delta)]
    delta: f64,
    #[arg(long, default_value_t = EmOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = EmOptions::default().max_iter)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    /// Target logits.
    #[arg(long)]
    target: PathBuf,
    /// Calibration parameters applied before reweighting.
    #[arg(long)]
    params: Option<PathBuf>,
    /// JSON array of weights, or a JSON object with a `weights` field.
    #[arg(long)]
    weights: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 2.5)]
    separation: f64,
    #[arg(long, default_value_t = 2.0)]
    temperature: f64,
    /// Comma-separated per-class biases; zeros when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    biases: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    n_valid: usize,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
    /// Shifted target: `dirichlet:<alpha>` or `tweak:<class>:<rho>`.
    #[arg(long)]
    shift: Option<String>,
    #[arg(long, default_value_t = 1000)]
    n_target: usize,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Override the number of trials.
    #[arg(long)]
    trials: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<labelshift::Error>()) {
        Some(inner) if !inner.is_input_error() => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config,
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Adapt(a) => adapt(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Experiment(a) => experiment(&ctx, a),
    }
}

struct Ctx {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Option<String>,
}

impl Ctx {
    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(self.out.as_deref())
    }

    /// Writes `text` to `<out>/<name>`, or stdout without `--out`.
    fn emit(&self, name: &str, text: &str) -> Result<()> {
        match self.out_dir()? {
            Some(dir) => {
                let path = dir.join(name);
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                info!("wrote {}", path.display());
            }
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn read_set(path: &Path) -> Result<labelshift::LabeledLogitSet> {
    load_dataset(path, DatasetFormat::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn read_logits(path: &Path) -> Result<Matrix> {
    load_logits(path, DatasetFormat::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn read_params(path: Option<&Path>) -> Result<CalibrationParams> {
    match path {
        None => Ok(CalibrationParams::none()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CalibrationParams::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<()> {
    let valid = read_set(&a.valid)?;
    let opts = FitOptions {
        grad_tol: a.grad_tol,
        max_iter: a.max_iter,
        ..FitOptions::default()
    };
    let fit = fit_calibration(a.family, &valid, &opts)?;
    for w in &fit.warnings {
        warn!("{w}");
    }
    eprintln!(
        "{}: nll {:.6} (uncalibrated {:.6}), {} iterations",
        a.family, fit.nll, fit.identity_nll, fit.iterations
    );
    let mut text = fit.params.to_json()?;
    text.push('\n');
    ctx.emit("calibration.json", &text)
}

fn estimate(ctx: &Ctx, a: EstimateArgs) -> Result<()> {
    let params = read_params(a.params.as_deref())?;
    let valid = read_set(&a.valid)?;
    let target = read_logits(&a.target)?;
    if target.cols() != valid.classes() {
        return Err(labelshift::Error::InvalidArgument(format!(
            "target has {} classes, validation {}",
            target.cols(),
            valid.classes()
        ))
        .into());
    }
    let valid_probs = apply_calibration(&params, valid.logits())?;
    let target_probs = apply_calibration(&params, &target)?;
    let source = estimate_source_priors(&valid_probs, a.source_priors, Some(valid.labels()))?;

    let report = match a.estimator {
        Estimator::Em | Estimator::EmDirect => {
            let r = if a.estimator == Estimator::Em {
                em_estimate(
                    &target_probs,
                    &source,
                    &EmOptions {
                        tol: a.tol,
                        max_iter: a.max_iter,
                    },
                )?
            } else {
                ml_estimate_direct(&target_probs, &source, &DirectOptions::default())?
            };
            if !r.converged {
                warn!("stopped after {} iterations without converging", r.iterations);
            }
            json!({
                "estimator": a.estimator,
                "source_priors": source,
                "target_priors": r.target_priors,
                "weights": r.weights,
                "iterations": r.iterations,
                "converged": r.converged,
                "log_likelihood": r.final_log_likelihood,
                "excluded_classes": r.excluded_classes,
            })
        }
        Estimator::BbslHard | Estimator::BbslSoft => {
            let mode = a.estimator.prediction_mode().expect("moment estimator");
            let w = bbsl_estimate(mode, &valid_probs, valid.labels(), &target_probs)?;
            json!({ "estimator": a.estimator, "source_priors": source, "weights": w })
        }
        Estimator::RllsHard | Estimator::RllsSoft => {
            let mode = a.estimator.prediction_mode().expect("moment estimator");
            let opts = RllsOptions {
                lambda: a.lambda,
                delta: a.delta,
                ..RllsOptions::default()
            };
            let r = rlls_estimate(mode, &valid_probs, valid.labels(), &target_probs, &opts)?;
            json!({
                "estimator": a.estimator,
                "source_priors": source,
                "weights": r.weights.as_slice(),
                "theta": r.theta,
                "iterations": r.iterations,
                "converged": r.converged,
            })
        }
    };
    ctx.emit(
        "estimate.json",
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )
}

fn read_weights(path: &Path) -> Result<ShiftWeights> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(labelshift::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    let array = match value {
        serde_json::Value::Object(mut obj) => obj.remove("weights").ok_or_else(|| anyhow!("no 'weights' field"))?,
        other => other,
    };
    Ok(serde_json::from_value(array).map_err(labelshift::Error::from)?)
}

fn adapt(ctx: &Ctx, a: AdaptArgs) -> Result<()> {
    let params = read_params(a.params.as_deref())?;
    let target = read_logits(&a.target)?;
    let weights = read_weights(&a.weights)?;
    let probs: ProbMatrix = apply_calibration(&params, &target)?;
    let adapted = adapt_predictions(&probs, &weights)?;
    let mut buf = Vec::new();
    dataset::write_probabilities_to(&adapted, &mut buf)?;
    ctx.emit("adapted.csv", &String::from_utf8(buf)?)
}

fn parse_shift(text: &str) -> Result<ShiftKind> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || labelshift::Error::InvalidArgument(format!("cannot parse shift '{text}'"));
    let kind = match parts.as_slice() {
        ["dirichlet", alpha] => ShiftKind::Dirichlet {
            alpha: alpha.parse().map_err(|_| bad())?,
        },
        ["tweak", class, rho] => ShiftKind::TweakOne {
            class_index: class.parse().map_err(|_| bad())?,
            rho: rho.parse().map_err(|_| bad())?,
        },
        _ => return Err(bad().into()),
    };
    Ok(kind)
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let mut spec = match &ctx.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SyntheticTaskSpec>(&text).map_err(labelshift::Error::from)?
        }
        None => SyntheticTaskSpec {
            classes: a.classes,
            true_priors: SimplexVector::uniform(a.classes),
            separation: a.separation,
            true_temperature: a.temperature,
            true_biases: a.biases.clone().unwrap_or_else(|| vec![0.0; a.classes]),
            seed: 0,
        },
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let format: DatasetFormat = ctx.format.as_deref().unwrap_or("csv").parse()?;
    let ext = match format {
        DatasetFormat::Csv => "csv",
        DatasetFormat::JsonLines => "jsonl",
    };
    let Some(dir) = ctx.out_dir()? else {
        bail!(labelshift::Error::InvalidArgument("simulate needs --out".into()));
    };
    let task = generate_synthetic_task(&spec, a.n_valid, a.n_test)?;
    write_dataset(&task.valid.set, dir.join(format!("valid.{ext}")), format)?;
    write_dataset(&task.pool.set, dir.join(format!("test.{ext}")), format)?;
    if let Some(shift) = &a.shift {
        let shift = ShiftSpec {
            kind: parse_shift(shift)?,
            sample_size: a.n_target,
            seed: spec.seed.wrapping_add(1),
        };
        let (priors, target) = shift.apply(&task.pool.set)?;
        write_dataset(&target, dir.join(format!("target.{ext}")), format)?;
        fs::write(
            dir.join("target_priors.json"),
            format!("{}\n", serde_json::to_string_pretty(&priors)?),
        )?;
    }
    fs::write(
        dir.join("task.json"),
        format!("{}\n", serde_json::to_string_pretty(&spec)?),
    )?;
    eprintln!("wrote synthetic task to {}", dir.display());
    Ok(())
}

fn experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<()> {
    let path = ctx
        .config
        .as_ref()
        .ok_or_else(|| labelshift::Error::InvalidArgument("experiment needs --config".into()))?;
    let mut config = ExperimentConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = ctx.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = a.trials {
        config.trials = trials;
    }
    let formats: Vec<ReportFormat> = match ctx.format.as_deref().unwrap_or("all") {
        "all" => vec![ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json],
        f => vec![f.parse()?],
    };
    let result = run_experiment(config)?;
    let dir = ctx
        .out_dir()?
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    for f in formats {
        let name = match f {
            ReportFormat::Csv => "records.csv",
            ReportFormat::Markdown => "summary.md",
            ReportFormat::Json => "results.json",
        };
        write_report(&result.records, dir.join(name), f)?;
    }
    eprintln!("{} records written to {}", result.records.len(), dir.display());
    Ok(())
}
