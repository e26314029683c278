//! Evaluation metrics: weight MSE, accuracy change, NLL, binned ECE,
//! Jensen-Shannon divergence, the Wilcoxon signed-rank test and median
//! ranks across trials.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::{argmax, ProbMatrix, SimplexVector};
use crate::shift_estimation::ShiftWeights;

/// Default ECE bin count.
pub const ECE_BINS: usize = 15;
/// Largest number of nonzero differences for which the signed-rank null
/// distribution is enumerated exactly.
pub const WILCOXON_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auxiliary: BTreeMap<String, f64>,
}

pub fn mse_weights(estimated: &ShiftWeights, true_w: &ShiftWeights) -> Result<f64> {
    mse(estimated.as_slice(), true_w.as_slice())
}

/// Mean squared componentwise difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

fn check_labels(probs: &ProbMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            probs.rows()
        )));
    }
    if let Some(k) = labels.iter().position(|&y| y >= probs.classes()) {
        return Err(Error::Validation {
            row: k,
            message: format!("label {} out of range", labels[k]),
        });
    }
    Ok(())
}

/// Mean negative log-probability of the true label, in nats. `+inf` if any
/// true label has probability zero.
pub fn nll(probs: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let total: f64 = probs.iter_rows().zip(labels).map(|(row, &y)| -row[y].ln()).sum();
    Ok(total / labels.len() as f64)
}

pub fn accuracy(probs: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Binned ECE with equal-width, left-open, right-closed bins over (0, 1].
pub fn ece(probs: &ProbMatrix, labels: &[usize], num_bins: usize) -> Result<f64> {
    Ok(ece_report(probs, labels, num_bins)?.value)
}

/// ECE with per-bin counts in the auxiliary map (`bin_<b>_count`).
pub fn ece_report(probs: &ProbMatrix, labels: &[usize], num_bins: usize) -> Result<MetricReport> {
    if num_bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    check_labels(probs, labels)?;
    let mut count = vec![0usize; num_bins];
    let mut correct = vec![0.0; num_bins];
    let mut confidence = vec![0.0; num_bins];
    for (row, &y) in probs.iter_rows().zip(labels) {
        let pred = argmax(row);
        let conf = row[pred];
        // bin b covers (b/B, (b+1)/B]
        let bins = num_bins as f64;
        let mut b = ((conf * bins).ceil() as usize).clamp(1, num_bins) - 1;
        if b > 0 && conf <= b as f64 / bins {
            // product rounded up past an edge, e.g. 0.3 * 10
            b -= 1;
        }
        count[b] += 1;
        confidence[b] += conf;
        if pred == y {
            correct[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    let value = (0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (correct[b] - confidence[b]).abs() / n)
        .sum();
    let auxiliary = count
        .iter()
        .enumerate()
        .map(|(b, &c)| (format!("bin_{b:02}_count"), c as f64))
        .collect();
    Ok(MetricReport {
        name: "ece".into(),
        value,
        n: labels.len(),
        auxiliary,
    })
}

/// Jensen-Shannon divergence in nats, with `0 · log 0 = 0`.
pub fn js_divergence(p: &SimplexVector, q: &SimplexVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", p.len(), q.len())));
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / (0.5 * (x + y))).ln())
            .sum()
    };
    let (p, q) = (p.as_slice(), q.as_slice());
    Ok((0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)).max(0.0))
}

/// Accuracy gain of `adapted` over `original`, in percentage points.
pub fn delta_accuracy(adapted: &ProbMatrix, original: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    if adapted.rows() != original.rows() || adapted.classes() != original.classes() {
        return Err(Error::invalid("adapted and original predictions differ in shape"));
    }
    Ok((accuracy(adapted, labels)? - accuracy(original, labels)?) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Differences tend to be positive.
    Greater,
    /// Differences tend to be negative.
    Less,
}

/// Ranks of `|d|` with ties averaged, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Exact null distribution of `W⁺` over all `2ⁿ` sign patterns, indexed
/// by `2 W⁺` so average ranks stay integral. Entry `s` is the probability
/// that `2 W⁺ = s`.
pub fn signed_rank_null_distribution(ranks: &[f64]) -> Vec<f64> {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut dist = vec![0.0; max + 1];
    dist[0] = 1.0;
    for &r in &doubled {
        for s in (0..=max).rev() {
            let with = if s >= r { dist[s - r] } else { 0.0 };
            dist[s] = 0.5 * (dist[s] + with);
        }
    }
    dist
}

/// One-sided Wilcoxon signed-rank p-value. Zero differences are dropped;
/// tied magnitudes share average ranks.
pub fn wilcoxon_signed_rank(diffs: &[f64], alternative: Alternative) -> Result<f64> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("differences must be finite"));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::DegenerateSample);
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = nonzero.len();

    if n <= WILCOXON_EXACT_MAX {
        let dist = signed_rank_null_distribution(&ranks);
        let observed = (2.0 * w_plus).round() as usize;
        let p = match alternative {
            Alternative::Greater => dist[observed..].iter().sum::<f64>(),
            Alternative::Less => dist[..=observed].iter().sum::<f64>(),
        };
        return Ok(p.min(1.0));
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = magnitudes.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let normal = Normal::standard();
    let p = match alternative {
        Alternative::Greater => 1.0 - normal.cdf((w_plus - mean - 0.5) / sd),
        Alternative::Less => normal.cdf((w_plus - mean + 0.5) / sd),
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Median over trials of each method's within-trial rank (0 = best, ties
/// averaged). `scores[t][j]` is method `j`'s score in trial `t`.
pub fn rank_methods<R: AsRef<[f64]>>(scores: &[R], lower_is_better: bool) -> Result<Vec<f64>> {
    let methods = scores.first().map_or(0, |r| r.as_ref().len());
    if scores.is_empty() || methods < 2 {
        return Err(Error::invalid("ranking needs at least one trial and two methods"));
    }
    let mut per_method: Vec<Vec<f64>> = vec![Vec::with_capacity(scores.len()); methods];
    for (t, row) in scores.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != methods {
            return Err(Error::invalid(format!(
                "trial {t} has {} scores, expected {methods}",
                row.len()
            )));
        }
        let keyed: Vec<f64> = if lower_is_better {
            row.to_vec()
        } else {
            row.iter().map(|v| -v).collect()
        };
        for (j, r) in average_ranks(&keyed).into_iter().enumerate() {
            per_method[j].push(r - 1.0);
        }
    }
    Ok(per_method.iter_mut().map(|v| median(v)).collect())
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
