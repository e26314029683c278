//! Post-hoc logit calibration: temperature scaling (TS), no-bias vector
//! scaling (NBVS), bias-corrected temperature scaling (BCTS) and vector
//! scaling (VS), each fitted by minimizing validation NLL.
//!
//! Positive parameters are optimized in log space. The unconstrained
//! parameter vector used by [`CalibrationObjective`] is laid out as
//!
//! | family | layout                      |
//! |--------|-----------------------------|
//! | TS     | `[log T]`                   |
//! | NBVS   | `[log W_0 .. log W_{m-1}]`  |
//! | BCTS   | `[log T, b_0 .. b_{m-1}]`   |
//! | VS     | `[log W_0 .., b_0 ..]`      |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_into, Matrix, ProbMatrix};
use crate::optimize::{self, BoxOptions, StopReason};

/// Bound on `|log T|` and `|log W_i|`.
pub const LOG_SCALE_CAP: f64 = 10.0;
/// Bound on `|b_i|`.
pub const BIAS_CAP: f64 = 20.0;

/// Raw logits with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLogitSet {
    logits: Matrix,
    labels: Vec<usize>,
}

impl LabeledLogitSet {
    pub fn new(logits: Matrix, labels: Vec<usize>) -> Result<Self> {
        if logits.rows() == 0 {
            return Err(Error::invalid("logit set must contain at least one example"));
        }
        if logits.cols() < 2 {
            return Err(Error::invalid("logit set needs at least two classes"));
        }
        if labels.len() != logits.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} logit rows",
                labels.len(),
                logits.rows()
            )));
        }
        for (k, row) in logits.iter_rows().enumerate() {
            if row.iter().any(|z| !z.is_finite()) {
                return Err(Error::Validation {
                    row: k,
                    message: "non-finite logit".into(),
                });
            }
        }
        if let Some(k) = labels.iter().position(|&y| y >= logits.cols()) {
            return Err(Error::Validation {
                row: k,
                message: format!("label {} out of range for {} classes", labels[k], logits.cols()),
            });
        }
        Ok(LabeledLogitSet { logits, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> LabeledLogitSet {
        LabeledLogitSet {
            logits: self.logits.select_rows(indices),
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
        }
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CalibrationFamily {
    None,
    #[serde(rename = "TS")]
    Ts,
    #[serde(rename = "NBVS")]
    Nbvs,
    #[serde(rename = "BCTS")]
    Bcts,
    #[serde(rename = "VS")]
    Vs,
}

impl CalibrationFamily {
    pub const ALL: [CalibrationFamily; 5] = [
        CalibrationFamily::None,
        CalibrationFamily::Ts,
        CalibrationFamily::Nbvs,
        CalibrationFamily::Bcts,
        CalibrationFamily::Vs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalibrationFamily::None => "None",
            CalibrationFamily::Ts => "TS",
            CalibrationFamily::Nbvs => "NBVS",
            CalibrationFamily::Bcts => "BCTS",
            CalibrationFamily::Vs => "VS",
        }
    }

    fn has_temperature(self) -> bool {
        matches!(self, CalibrationFamily::Ts | CalibrationFamily::Bcts)
    }

    fn has_scales(self) -> bool {
        matches!(self, CalibrationFamily::Nbvs | CalibrationFamily::Vs)
    }

    fn has_biases(self) -> bool {
        matches!(self, CalibrationFamily::Bcts | CalibrationFamily::Vs)
    }

    /// Length of the unconstrained parameter vector for `m` classes.
    pub fn dimension(self, m: usize) -> usize {
        let scale = if self.has_temperature() {
            1
        } else if self.has_scales() {
            m
        } else {
            0
        };
        scale + if self.has_biases() { m } else { 0 }
    }
}

impl fmt::Display for CalibrationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CalibrationFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CalibrationFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown calibration family '{s}'")))
    }
}

/// Fitted parameters of one calibration family.
///
/// Serialized as `{"family": "BCTS", "T": 1.3, "b": [..]}`; fields unused by
/// the family are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub family: CalibrationFamily,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(rename = "b", default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<f64>>,
}

impl CalibrationParams {
    pub fn identity(family: CalibrationFamily, m: usize) -> Self {
        CalibrationParams {
            family,
            temperature: family.has_temperature().then_some(1.0),
            scales: family.has_scales().then(|| vec![1.0; m]),
            biases: family.has_biases().then(|| vec![0.0; m]),
        }
    }

    pub fn none() -> Self {
        CalibrationParams::identity(CalibrationFamily::None, 0)
    }

    pub fn temperature_scaling(t: f64) -> Self {
        CalibrationParams {
            family: CalibrationFamily::Ts,
            temperature: Some(t),
            scales: None,
            biases: None,
        }
    }

    pub fn bcts(t: f64, biases: Vec<f64>) -> Self {
        CalibrationParams {
            family: CalibrationFamily::Bcts,
            temperature: Some(t),
            scales: None,
            biases: Some(biases),
        }
    }

    pub fn nbvs(scales: Vec<f64>) -> Self {
        CalibrationParams {
            family: CalibrationFamily::Nbvs,
            temperature: None,
            scales: Some(scales),
            biases: None,
        }
    }

    pub fn vector_scaling(scales: Vec<f64>, biases: Vec<f64>) -> Self {
        CalibrationParams {
            family: CalibrationFamily::Vs,
            temperature: None,
            scales: Some(scales),
            biases: Some(biases),
        }
    }

    /// Checks that required fields are present, positive where needed and
    /// sized for `m` classes.
    pub fn validate(&self, m: usize) -> Result<()> {
        let fam = self.family;
        if fam.has_temperature() {
            match self.temperature {
                Some(t) if t > 0.0 && t.is_finite() => {}
                Some(t) => return Err(Error::invalid(format!("temperature must be positive, got {t}"))),
                None => return Err(Error::invalid(format!("{fam} requires a temperature"))),
            }
        }
        if fam.has_scales() {
            let w = self
                .scales
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{fam} requires per-class scales")))?;
            if w.len() != m {
                return Err(Error::invalid(format!("{} scales for {m} classes", w.len())));
            }
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::invalid("scales must be positive and finite"));
            }
        }
        if fam.has_biases() {
            let b = self
                .biases
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{fam} requires per-class biases")))?;
            if b.len() != m {
                return Err(Error::invalid(format!("{} biases for {m} classes", b.len())));
            }
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("biases must be finite"));
            }
        }
        Ok(())
    }

    /// Transformed logits for one example.
    fn transform_into(&self, z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(z);
        if let Some(t) = self.temperature.filter(|_| self.family.has_temperature()) {
            out.iter_mut().for_each(|g| *g /= t);
        }
        if let Some(w) = self.scales.as_ref().filter(|_| self.family.has_scales()) {
            out.iter_mut().zip(w).for_each(|(g, wi)| *g *= wi);
        }
        if let Some(b) = self.biases.as_ref().filter(|_| self.family.has_biases()) {
            out.iter_mut().zip(b).for_each(|(g, bi)| *g += bi);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Applies `params` to every row of `logits` and returns softmax
/// probabilities.
pub fn apply_calibration(params: &CalibrationParams, logits: &Matrix) -> Result<ProbMatrix> {
    let m = logits.cols();
    params.validate(m)?;
    let mut out = Matrix::zeros(logits.rows(), m);
    let mut g = vec![0.0; m];
    for k in 0..logits.rows() {
        params.transform_into(logits.row(k), &mut g);
        softmax_into(&g, out.row_mut(k));
    }
    Ok(ProbMatrix::from_matrix_unchecked(out))
}

/// Mean validation NLL of a family as a function of its unconstrained
/// parameter vector.
pub struct CalibrationObjective<'a> {
    family: CalibrationFamily,
    data: &'a LabeledLogitSet,
}

impl<'a> CalibrationObjective<'a> {
    pub fn new(family: CalibrationFamily, data: &'a LabeledLogitSet) -> Self {
        CalibrationObjective { family, data }
    }

    pub fn dimension(&self) -> usize {
        self.family.dimension(self.data.classes())
    }

    pub fn params_from_theta(&self, theta: &[f64]) -> CalibrationParams {
        let m = self.data.classes();
        let (scale, bias) = self.split(theta);
        match self.family {
            CalibrationFamily::None => CalibrationParams::none(),
            CalibrationFamily::Ts => CalibrationParams::temperature_scaling(scale[0].exp()),
            CalibrationFamily::Nbvs => CalibrationParams::nbvs(scale.iter().map(|v| v.exp()).collect()),
            CalibrationFamily::Bcts => CalibrationParams::bcts(scale[0].exp(), bias.to_vec()),
            CalibrationFamily::Vs => {
                debug_assert_eq!(bias.len(), m);
                CalibrationParams::vector_scaling(scale.iter().map(|v| v.exp()).collect(), bias.to_vec())
            }
        }
    }

    pub fn theta_from_params(&self, params: &CalibrationParams) -> Result<Vec<f64>> {
        if params.family != self.family {
            return Err(Error::invalid(format!(
                "parameters are {} but objective is {}",
                params.family, self.family
            )));
        }
        params.validate(self.data.classes())?;
        let mut theta = Vec::with_capacity(self.dimension());
        if let Some(t) = params.temperature.filter(|_| self.family.has_temperature()) {
            theta.push(t.ln());
        }
        if let Some(w) = params.scales.as_ref().filter(|_| self.family.has_scales()) {
            theta.extend(w.iter().map(|x| x.ln()));
        }
        if let Some(b) = params.biases.as_ref().filter(|_| self.family.has_biases()) {
            theta.extend_from_slice(b);
        }
        Ok(theta)
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], &'t [f64]) {
        let m = self.data.classes();
        let n_scale = if self.family.has_temperature() {
            1
        } else if self.family.has_scales() {
            m
        } else {
            0
        };
        theta.split_at(n_scale)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, false).0
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        self.evaluate(theta, true)
    }

    fn evaluate(&self, theta: &[f64], with_grad: bool) -> (f64, Vec<f64>) {
        let m = self.data.classes();
        let (scale, bias) = self.split(theta);
        let fam = self.family;
        let inv_t = if fam.has_temperature() { (-scale[0]).exp() } else { 1.0 };
        let w: Vec<f64> = if fam.has_scales() {
            scale.iter().map(|v| v.exp()).collect()
        } else {
            Vec::new()
        };

        let mut grad = vec![0.0; if with_grad { theta.len() } else { 0 }];
        let mut scaled = vec![0.0; m];
        let mut g = vec![0.0; m];
        let mut prob = vec![0.0; m];
        let mut total = 0.0;

        for (z, &y) in self.data.logits.iter_rows().zip(&self.data.labels) {
            for i in 0..m {
                scaled[i] = if fam.has_temperature() {
                    z[i] * inv_t
                } else if fam.has_scales() {
                    z[i] * w[i]
                } else {
                    z[i]
                };
                g[i] = scaled[i] + if fam.has_biases() { bias[i] } else { 0.0 };
            }
            let lse = softmax_into(&g, &mut prob);
            total += lse - g[y];
            if !with_grad {
                continue;
            }
            // d nll / d g_i = prob_i - [i == y]
            prob[y] -= 1.0;
            let offset = match fam {
                CalibrationFamily::Ts | CalibrationFamily::Bcts => {
                    // d g_i / d log T = -z_i / T
                    grad[0] -= prob.iter().zip(&scaled).map(|(r, s)| r * s).sum::<f64>();
                    1
                }
                CalibrationFamily::Nbvs | CalibrationFamily::Vs => {
                    // d g_i / d log W_i = z_i W_i
                    for i in 0..m {
                        grad[i] += prob[i] * scaled[i];
                    }
                    m
                }
                CalibrationFamily::None => 0,
            };
            if fam.has_biases() {
                for i in 0..m {
                    grad[offset + i] += prob[i];
                }
            }
        }
        let n = self.data.len() as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        (total / n, grad)
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let zeros = vec![0.0; self.dimension()];
        let (scale, bias) = self.split(&zeros);
        let mut lo = vec![-LOG_SCALE_CAP; scale.len()];
        let mut hi = vec![LOG_SCALE_CAP; scale.len()];
        lo.resize(lo.len() + bias.len(), -BIAS_CAP);
        hi.resize(hi.len() + bias.len(), BIAS_CAP);
        (lo, hi)
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Stop once the projected gradient's max-abs entry is at most this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Number of curvature pairs kept for the quasi-Newton direction.
    pub memory: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tol: 1e-6,
            max_iter: 10_000,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationFit {
    pub params: CalibrationParams,
    pub nll: f64,
    /// NLL of the untransformed logits on the same data.
    pub identity_nll: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub stop: StopReason,
    /// True when some parameter sits on its cap.
    pub capped: bool,
    pub warnings: Vec<String>,
}

impl CalibrationFit {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::GradientTolerance
    }
}

/// Fits `family` on `valid` by minimizing mean NLL, starting from the
/// identity transform.
pub fn fit_calibration(
    family: CalibrationFamily,
    valid: &LabeledLogitSet,
    opts: &FitOptions,
) -> Result<CalibrationFit> {
    let m = valid.classes();
    let identity = CalibrationParams::identity(family, m);
    let objective = CalibrationObjective::new(family, valid);
    let identity_nll = CalibrationObjective::new(CalibrationFamily::None, valid).value(&[]);
    if family == CalibrationFamily::None {
        return Ok(CalibrationFit {
            params: identity,
            nll: identity_nll,
            identity_nll,
            iterations: 0,
            gradient_norm: 0.0,
            stop: StopReason::GradientTolerance,
            capped: false,
            warnings: Vec::new(),
        });
    }

    let (lower, upper) = objective.bounds();
    let theta0 = objective.theta_from_params(&identity)?;
    let min = optimize::minimize(
        |theta| objective.value_and_gradient(theta),
        theta0,
        &BoxOptions {
            lower,
            upper,
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
            memory: opts.memory,
        },
    )?;

    let mut warnings = Vec::new();
    let counts = valid.label_counts();
    let missing: Vec<usize> = (0..m).filter(|&i| counts[i] == 0).collect();
    if !missing.is_empty() {
        warnings.push(format!("classes {missing:?} never appear in the validation labels"));
    }
    let capped = !min.active_bounds.is_empty();
    if capped {
        warnings.push(format!(
            "parameters {:?} reached their caps (|log scale| <= {LOG_SCALE_CAP}, |bias| <= {BIAS_CAP})",
            min.active_bounds
        ));
    }
    match min.stop {
        StopReason::GradientTolerance => {}
        StopReason::MaxIterations => warnings.push(format!(
            "stopped after {} iterations with gradient norm {:.3e}",
            min.iterations, min.projected_grad_norm
        )),
        StopReason::LineSearchFailed => warnings.push(format!(
            "line search stalled at iteration {} with gradient norm {:.3e}",
            min.iterations, min.projected_grad_norm
        )),
    }
    for w in &warnings {
        log::warn!("{family} calibration: {w}");
    }

    Ok(CalibrationFit {
        params: objective.params_from_theta(&min.x),
        nll: min.value,
        identity_nll,
        iterations: min.iterations,
        gradient_norm: min.projected_grad_norm,
        stop: min.stop,
        capped,
        warnings,
    })
}
