//! Label-shift simulators and a synthetic Gaussian-mixture task whose
//! posteriors are known in closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibration::LabeledLogitSet;
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp_unchecked, Matrix, ProbMatrix, SimplexVector};

/// How target priors are chosen for one shifted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Dirichlet { alpha: f64 },
    TweakOne { class_index: usize, rho: f64 },
    Explicit { priors: SimplexVector },
}

impl ShiftKind {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ShiftKind::Dirichlet { alpha } if !(alpha.is_finite() && *alpha > 0.0) => {
                Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")))
            }
            ShiftKind::TweakOne { class_index, rho } => {
                if *class_index >= m {
                    Err(Error::invalid(format!(
                        "tweak-one class {class_index} out of range for {m} classes"
                    )))
                } else if !(0.0..=1.0).contains(rho) {
                    Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")))
                } else {
                    Ok(())
                }
            }
            ShiftKind::Explicit { priors } if priors.len() != m => Err(Error::invalid(format!(
                "explicit priors have {} entries for {m} classes",
                priors.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Draws (or returns) the nominal target priors.
    pub fn priors<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<SimplexVector> {
        self.validate(m)?;
        match self {
            ShiftKind::Dirichlet { alpha } => dirichlet_with(*alpha, m, rng),
            ShiftKind::TweakOne { class_index, rho } => tweak_one_priors(m, *class_index, *rho),
            ShiftKind::Explicit { priors } => Ok(priors.clone()),
        }
    }

    /// Short label such as `alpha=0.1` or `rho=0.9@3`.
    pub fn label(&self) -> String {
        match self {
            ShiftKind::Dirichlet { alpha } => format!("alpha={alpha}"),
            ShiftKind::TweakOne { class_index, rho } => format!("rho={rho}@{class_index}"),
            ShiftKind::Explicit { priors } => {
                let parts: Vec<String> = priors.as_slice().iter().map(|p| p.to_string()).collect();
                format!("priors={}", parts.join(":"))
            }
        }
    }
}

/// A shift kind with its sample size and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub sample_size: usize,
    pub seed: u64,
}

impl ShiftSpec {
    /// Draws priors from `kind` and resamples `data` to `sample_size`.
    /// Returns the nominal priors with the shifted set.
    pub fn apply(&self, data: &LabeledLogitSet) -> Result<(SimplexVector, LabeledLogitSet)> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let priors = self.kind.priors(data.classes(), &mut rng)?;
        let shifted = resample_with(data, &priors, self.sample_size, &mut rng)?;
        Ok((priors, shifted))
    }
}

/// One draw from `Dirichlet(alpha · 1_m)`.
pub fn sample_dirichlet_priors(alpha: f64, m: usize, seed: u64) -> Result<SimplexVector> {
    dirichlet_with(alpha, m, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Gamma draws are taken in log space, `log G(α) = log G(α + 1) + log(U) / α`,
/// so small `alpha` cannot underflow every coordinate to zero.
pub fn dirichlet_with<R: Rng + ?Sized>(alpha: f64, m: usize, rng: &mut R) -> Result<SimplexVector> {
    if m < 2 {
        return Err(Error::invalid("dirichlet priors need at least two classes"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha + 1.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let logs: Vec<f64> = (0..m)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let norm = log_sum_exp_unchecked(&logs);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - norm).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(SimplexVector::from_raw(p))
}

/// Class `class_index` gets `rho`; the others share `1 - rho` evenly.
pub fn tweak_one_priors(m: usize, class_index: usize, rho: f64) -> Result<SimplexVector> {
    if m < 2 {
        return Err(Error::invalid("tweak-one priors need at least two classes"));
    }
    if class_index >= m {
        return Err(Error::invalid(format!(
            "class {class_index} out of range for {m} classes"
        )));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
    }
    let rest = (1.0 - rho) / (m - 1) as f64;
    let mut p = vec![rest; m];
    p[class_index] = rho;
    Ok(SimplexVector::from_raw(p))
}

/// Multinomial class counts, then uniform sampling with replacement within
/// each class. Output rows are grouped by class.
pub fn resample_by_priors(
    data: &LabeledLogitSet,
    priors: &SimplexVector,
    n: usize,
    seed: u64,
) -> Result<LabeledLogitSet> {
    resample_with(data, priors, n, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn resample_with<R: Rng + ?Sized>(
    data: &LabeledLogitSet,
    priors: &SimplexVector,
    n: usize,
    rng: &mut R,
) -> Result<LabeledLogitSet> {
    let m = data.classes();
    if priors.len() != m {
        return Err(Error::invalid(format!("{} priors for {m} classes", priors.len())));
    }
    if n == 0 {
        return Err(Error::invalid("resample size must be at least 1"));
    }
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (k, &y) in data.labels().iter().enumerate() {
        strata[y].push(k);
    }
    if let Some(i) = (0..m).find(|&i| priors[i] > 0.0 && strata[i].is_empty()) {
        return Err(Error::UnsatisfiableShift { class: i });
    }
    let counts = multinomial(n, priors.as_slice(), rng)?;
    let mut picked = Vec::with_capacity(n);
    for (stratum, &count) in strata.iter().zip(&counts) {
        for _ in 0..count {
            picked.push(stratum[rng.gen_range(0..stratum.len())]);
        }
    }
    Ok(data.select(&picked))
}

/// Sequential conditional binomials.
fn multinomial<R: Rng + ?Sized>(n: usize, p: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; p.len()];
    let mut remaining = n as u64;
    let mut mass = 1.0;
    for (i, &pi) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == p.len() - 1 || mass <= pi {
            counts[i] = remaining as usize;
            remaining = 0;
            break;
        }
        let prob = (pi / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, prob)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(rng);
        counts[i] = draw as usize;
        remaining -= draw;
        mass -= pi;
    }
    // leftover mass can only come from rounding; give it to the last positive class
    if remaining > 0 {
        let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1);
        counts[last] += remaining as usize;
    }
    Ok(counts)
}

/// Gaussian mixture `x | y ~ N(separation · e_y, I_m)` observed through a
/// miscalibrated classifier with logits `z_i = T* · (log p(y=i|x) − b*_i)`.
/// BCTS with temperature `T*` and biases `b*` recovers the true posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub classes: usize,
    pub true_priors: SimplexVector,
    pub separation: f64,
    pub true_temperature: f64,
    pub true_biases: Vec<f64>,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let m = self.classes;
        if m < 2 {
            return Err(Error::invalid("synthetic task needs at least two classes"));
        }
        if self.true_priors.len() != m || self.true_biases.len() != m {
            return Err(Error::invalid("priors and biases must have one entry per class"));
        }
        if !(self.true_temperature.is_finite() && self.true_temperature > 0.0) {
            return Err(Error::invalid("true temperature must be positive"));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::invalid("separation must be positive"));
        }
        if self.true_biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("biases must be finite"));
        }
        Ok(())
    }

    /// Log posterior `log p(y=i | x)` for a feature vector.
    pub fn log_posterior(&self, x: &[f64]) -> Vec<f64> {
        // ‖μ_i‖ is the same for every class, so only the cross term survives
        let scores: Vec<f64> = self
            .true_priors
            .as_slice()
            .iter()
            .zip(x)
            .map(|(&pi, &xi)| pi.ln() + self.separation * xi)
            .collect();
        let norm = log_sum_exp_unchecked(&scores);
        scores.iter().map(|s| s - norm).collect()
    }

    /// Classifier logits for a feature vector.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.log_posterior(x)
            .iter()
            .zip(&self.true_biases)
            .map(|(lp, b)| self.true_temperature * (lp.max(-700.0) - b))
            .collect()
    }
}

/// A generated labelled sample with its true posteriors.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub set: LabeledLogitSet,
    pub features: Matrix,
    pub true_posterior: ProbMatrix,
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub valid: SyntheticSample,
    pub pool: SyntheticSample,
    pub spec: SyntheticTaskSpec,
}

impl SyntheticTask {
    pub fn true_posterior(&self, x: &[f64]) -> SimplexVector {
        SimplexVector::from_raw(self.spec.log_posterior(x).iter().map(|l| l.exp()).collect())
    }
}

pub fn generate_synthetic_task(spec: &SyntheticTaskSpec, n_valid: usize, n_pool: usize) -> Result<SyntheticTask> {
    spec.validate()?;
    if n_valid == 0 || n_pool == 0 {
        return Err(Error::invalid("synthetic sample sizes must be at least 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let valid = draw_sample(spec, n_valid, &mut rng)?;
    let pool = draw_sample(spec, n_pool, &mut rng)?;
    Ok(SyntheticTask {
        valid,
        pool,
        spec: spec.clone(),
    })
}

fn draw_sample<R: Rng + ?Sized>(spec: &SyntheticTaskSpec, n: usize, rng: &mut R) -> Result<SyntheticSample> {
    let m = spec.classes;
    let labels = multinomial(n, spec.true_priors.as_slice(), rng)?
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c))
        .collect::<Vec<_>>();
    let mut features = Matrix::zeros(n, m);
    let mut logits = Matrix::zeros(n, m);
    let mut posterior = Matrix::zeros(n, m);
    for (k, &y) in labels.iter().enumerate() {
        let x = features.row_mut(k);
        for (i, xi) in x.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(rng);
            *xi = noise + if i == y { spec.separation } else { 0.0 };
        }
        let x = features.row(k).to_vec();
        logits.row_mut(k).copy_from_slice(&spec.logits(&x));
        for (dst, lp) in posterior.row_mut(k).iter_mut().zip(spec.log_posterior(&x)) {
            *dst = lp.exp();
        }
    }
    Ok(SyntheticSample {
        set: LabeledLogitSet::new(logits, labels)?,
        features,
        true_posterior: ProbMatrix::from_matrix_unchecked(posterior),
    })
}
