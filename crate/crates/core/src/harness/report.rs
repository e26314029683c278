//! Record tables and summaries: CSV, markdown and JSON.
//!
//! Record CSV columns, in order:
//! `trial_id, shift, n, estimator, calibration, true_weights,
//! estimated_weights, mse, mse_nominal, delta_acc, nll_unshifted,
//! ece_unshifted, js_bias, em_iterations, flags`.
//! Vectors are `;`-separated, flags `|`-separated, missing values empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Estimator;
use super::trial::TrialRecord;
use crate::calibration::CalibrationFamily;
use crate::error::{Error, Result};
use crate::metrics::{median, rank_methods, wilcoxon_signed_rank, Alternative};

/// One-sided p-value below which a method is significantly worse than the
/// best in its column.
pub const SIGNIFICANCE: f64 = 0.01;

pub const CSV_COLUMNS: [&str; 15] = [
    "trial_id",
    "shift",
    "n",
    "estimator",
    "calibration",
    "true_weights",
    "estimated_weights",
    "mse",
    "mse_nominal",
    "delta_acc",
    "nll_unshifted",
    "ece_unshifted",
    "js_bias",
    "em_iterations",
    "flags",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("unknown report format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMetric {
    Mse,
    DeltaAcc,
    NllUnshifted,
    EceUnshifted,
    JsBias,
}

impl SummaryMetric {
    pub const ALL: [SummaryMetric; 5] = [
        SummaryMetric::Mse,
        SummaryMetric::DeltaAcc,
        SummaryMetric::NllUnshifted,
        SummaryMetric::EceUnshifted,
        SummaryMetric::JsBias,
    ];

    pub fn lower_is_better(self) -> bool {
        self != SummaryMetric::DeltaAcc
    }

    /// Calibration metrics do not depend on the estimator.
    pub fn per_family(self) -> bool {
        matches!(
            self,
            SummaryMetric::NllUnshifted | SummaryMetric::EceUnshifted | SummaryMetric::JsBias
        )
    }

    fn title(self) -> &'static str {
        match self {
            SummaryMetric::Mse => "Weight MSE",
            SummaryMetric::DeltaAcc => "Change in accuracy (percentage points)",
            SummaryMetric::NllUnshifted => "NLL on unshifted test data",
            SummaryMetric::EceUnshifted => "ECE on unshifted test data",
            SummaryMetric::JsBias => "JS divergence of mean prediction from label frequencies",
        }
    }

    fn value(self, r: &TrialRecord) -> Option<f64> {
        match self {
            SummaryMetric::Mse => r.mse,
            SummaryMetric::DeltaAcc => r.delta_acc,
            SummaryMetric::NllUnshifted => Some(r.nll_unshifted),
            SummaryMetric::EceUnshifted => Some(r.ece_unshifted),
            SummaryMetric::JsBias => Some(r.js_bias),
        }
    }
}

/// Median and median rank of one method group in one (shift, n) column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub metric: SummaryMetric,
    /// `None` for per-family metrics.
    pub estimator: Option<Estimator>,
    pub calibration: CalibrationFamily,
    pub shift: String,
    pub n: usize,
    pub median: f64,
    pub median_rank: Option<f64>,
    pub trials: usize,
    /// One-sided Wilcoxon p-value for "worse than the column's best";
    /// `None` for the best group itself.
    pub p_value: Option<f64>,
    /// Best, or not significantly worse than the best.
    pub bold: bool,
}

type Group = (Option<Estimator>, CalibrationFamily);

/// Summary cells of one metric, in order of first appearance of each
/// column and group.
pub fn summarize(records: &[TrialRecord], metric: SummaryMetric) -> Vec<SummaryCell> {
    let mut columns: Vec<(String, usize)> = Vec::new();
    let mut groups: Vec<Group> = Vec::new();
    // (column, group) -> trial -> value
    let mut values: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records {
        let Some(v) = metric.value(r) else { continue };
        if !v.is_finite() && metric != SummaryMetric::NllUnshifted {
            continue;
        }
        let col_key = (r.shift.clone(), r.n);
        let col = position_or_push(&mut columns, col_key);
        let group: Group = (
            if metric.per_family() { None } else { Some(r.estimator) },
            r.calibration,
        );
        let g = position_or_push(&mut groups, group);
        values.entry((col, g)).or_default().entry(r.trial_id).or_insert(v);
    }

    let mut out = Vec::new();
    let lower = metric.lower_is_better();
    for (c, (shift, n)) in columns.iter().enumerate() {
        let present: Vec<usize> = (0..groups.len()).filter(|g| values.contains_key(&(c, *g))).collect();
        if present.is_empty() {
            continue;
        }
        let series: Vec<&BTreeMap<usize, f64>> = present.iter().map(|g| &values[&(c, *g)]).collect();
        let medians: Vec<f64> = series
            .iter()
            .map(|s| median(&mut s.values().copied().collect::<Vec<_>>()))
            .collect();

        let ranks: Vec<Option<f64>> = if present.len() == 1 {
            vec![Some(0.0)]
        } else {
            let complete: Vec<Vec<f64>> = series[0]
                .keys()
                .filter(|t| series.iter().all(|s| s.contains_key(t)))
                .map(|t| series.iter().map(|s| s[t]).collect())
                .collect();
            match rank_methods(&complete, lower) {
                Ok(r) => r.into_iter().map(Some).collect(),
                Err(_) => vec![None; present.len()],
            }
        };

        let best = (0..present.len())
            .reduce(|a, b| {
                let better = if lower {
                    medians[b] < medians[a]
                } else {
                    medians[b] > medians[a]
                };
                if better {
                    b
                } else {
                    a
                }
            })
            .expect("non-empty column");

        for (j, &g) in present.iter().enumerate() {
            let p_value = (j != best).then(|| {
                let diffs: Vec<f64> = series[j]
                    .iter()
                    .filter_map(|(t, v)| series[best].get(t).map(|b| if lower { v - b } else { b - v }))
                    .filter(|d| d.is_finite())
                    .collect();
                // identical outputs or no paired trials: a tie
                wilcoxon_signed_rank(&diffs, Alternative::Greater).unwrap_or(1.0)
            });
            out.push(SummaryCell {
                metric,
                estimator: groups[g].0,
                calibration: groups[g].1,
                shift: shift.clone(),
                n: *n,
                median: medians[j],
                median_rank: ranks[j],
                trials: series[j].len(),
                p_value,
                bold: p_value.is_none_or(|p| p >= SIGNIFICANCE),
            });
        }
    }
    out
}

fn position_or_push<T: PartialEq>(items: &mut Vec<T>, item: T) -> usize {
    match items.iter().position(|x| *x == item) {
        Some(i) => i,
        None => {
            items.push(item);
            items.len() - 1
        }
    }
}

pub fn summarize_all(records: &[TrialRecord]) -> Vec<SummaryCell> {
    SummaryMetric::ALL.iter().flat_map(|&m| summarize(records, m)).collect()
}

/// Five significant digits.
pub fn format_sig5(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.4e}").parse().expect("formatted float parses");
    let exponent = rounded.abs().log10().floor() as i32;
    if !(-5..=5).contains(&exponent) {
        return format!("{rounded:.4e}");
    }
    let decimals = (4 - exponent).max(0) as usize;
    format!("{rounded:.decimals$}")
}

/// Markdown tables, one per metric: rows are method groups, columns
/// (shift, n); each entry is `median; median rank`, bold when not
/// significantly worse than the column's best.
pub fn render_markdown(summary: &[SummaryCell]) -> String {
    let mut md = String::from("# Experiment summary\n");
    for metric in SummaryMetric::ALL {
        let cells: Vec<&SummaryCell> = summary.iter().filter(|c| c.metric == metric).collect();
        if cells.is_empty() {
            continue;
        }
        let mut columns: Vec<(String, usize)> = Vec::new();
        let mut groups: Vec<Group> = Vec::new();
        for c in &cells {
            position_or_push(&mut columns, (c.shift.clone(), c.n));
            position_or_push(&mut groups, (c.estimator, c.calibration));
        }
        let _ = writeln!(md, "\n## {}\n", metric.title());
        let head: Vec<String> = columns.iter().map(|(s, n)| format!("{s}, n={n}")).collect();
        let lead = if metric.per_family() {
            "| Calibration |"
        } else {
            "| Estimator | Calibration |"
        };
        let _ = writeln!(md, "{lead} {} |", head.join(" | "));
        let rule_cols = if metric.per_family() { 1 } else { 2 } + columns.len();
        let _ = writeln!(md, "|{}", "---|".repeat(rule_cols));
        for g in &groups {
            let mut row = String::from("|");
            if let Some(e) = g.0 {
                let _ = write!(row, " {e} |");
            }
            let _ = write!(row, " {} |", g.1);
            for col in &columns {
                let cell = cells
                    .iter()
                    .find(|c| (c.estimator, c.calibration) == *g && (c.shift.as_str(), c.n) == (col.0.as_str(), col.1));
                let text = match cell {
                    None => "n/a".to_string(),
                    Some(c) => {
                        let rank = c.median_rank.map_or("n/a".into(), format_sig5);
                        let body = format!("{}; {}", format_sig5(c.median), rank);
                        if c.bold {
                            format!("**{body}**")
                        } else {
                            body
                        }
                    }
                };
                let _ = write!(row, " {text} |");
            }
            md.push_str(&row);
            md.push('\n');
        }
    }
    md
}

fn join_floats(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(sep)
}

fn opt<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

fn record_row(r: &TrialRecord) -> Vec<String> {
    vec![
        r.trial_id.to_string(),
        r.shift.clone(),
        r.n.to_string(),
        r.estimator.to_string(),
        r.calibration.to_string(),
        join_floats(&r.true_weights, ";"),
        r.estimated_weights
            .as_deref()
            .map_or(String::new(), |w| join_floats(w, ";")),
        opt(r.mse),
        opt(r.mse_nominal),
        opt(r.delta_acc),
        format!("{:?}", r.nll_unshifted),
        format!("{:?}", r.ece_unshifted),
        format!("{:?}", r.js_bias),
        opt(r.em_iterations),
        r.flags.join("|"),
    ]
}

pub fn write_records_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(to_err)?;
    for r in records {
        w.write_record(record_row(r)).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write failed: {e}")))
}

fn field<T: FromStr>(text: &str, line: usize, name: &str) -> Result<T> {
    text.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {name} '{text}'"),
    })
}

fn opt_field<T: FromStr>(text: &str, line: usize, name: &str) -> Result<Option<T>> {
    if text.is_empty() {
        Ok(None)
    } else {
        field(text, line, name).map(Some)
    }
}

fn floats(text: &str, line: usize, name: &str) -> Result<Vec<f64>> {
    text.split(';').map(|s| field(s, line, name)).collect()
}

/// Reads a records CSV written by [`write_report`].
pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected record columns".into(),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if row.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields", CSV_COLUMNS.len()),
            });
        }
        let estimated = &row[6];
        records.push(TrialRecord {
            trial_id: field(&row[0], line, "trial_id")?,
            shift: row[1].to_string(),
            n: field(&row[2], line, "n")?,
            estimator: field(&row[3], line, "estimator")?,
            calibration: field(&row[4], line, "calibration")?,
            true_weights: floats(&row[5], line, "true_weights")?,
            estimated_weights: if estimated.is_empty() {
                None
            } else {
                Some(floats(estimated, line, "estimated_weights")?)
            },
            mse: opt_field(&row[7], line, "mse")?,
            mse_nominal: opt_field(&row[8], line, "mse_nominal")?,
            delta_acc: opt_field(&row[9], line, "delta_acc")?,
            nll_unshifted: field(&row[10], line, "nll_unshifted")?,
            ece_unshifted: field(&row[11], line, "ece_unshifted")?,
            js_bias: field(&row[12], line, "js_bias")?,
            em_iterations: opt_field(&row[13], line, "em_iterations")?,
            flags: if row[14].is_empty() {
                Vec::new()
            } else {
                row[14].split('|').map(str::to_string).collect()
            },
        });
    }
    Ok(records)
}

#[derive(Serialize)]
struct JsonReport<'a> {
    records: &'a [TrialRecord],
    summary: &'a [SummaryCell],
}

/// Writes `records` to `path`: the record table (csv), the summary tables
/// (markdown) or both (json).
pub fn write_report(records: &[TrialRecord], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        ReportFormat::Csv => write_records_csv(records, &mut out)?,
        ReportFormat::Markdown => out
            .write_all(render_markdown(&summarize_all(records)).as_bytes())
            .map_err(io)?,
        ReportFormat::Json => {
            let summary = summarize_all(records);
            serde_json::to_writer_pretty(
                &mut out,
                &JsonReport {
                    records,
                    summary: &summary,
                },
            )?;
            out.write_all(b"\n").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: usize, estimator: Estimator, mse: Option<f64>) -> TrialRecord {
        TrialRecord {
            trial_id: trial,
            shift: "alpha=0.1".into(),
            n: 100,
            estimator,
            calibration: CalibrationFamily::Bcts,
            true_weights: vec![0.5, 1.5],
            estimated_weights: mse.map(|_| vec![0.25, 1.0 / 3.0]),
            mse,
            mse_nominal: mse,
            delta_acc: None,
            nll_unshifted: f64::INFINITY,
            ece_unshifted: 0.1,
            js_bias: 1e-3,
            em_iterations: Some(4),
            flags: if mse.is_none() {
                vec!["singular_confusion".into(), "x".into()]
            } else {
                vec![]
            },
        }
    }

    #[test]
    fn sig5_formatting() {
        assert_eq!(format_sig5(0.0123456), "0.012346");
        assert_eq!(format_sig5(12.345678), "12.346");
        assert_eq!(format_sig5(9.999996), "10.000");
        assert_eq!(format_sig5(-1.5), "-1.5000");
        assert_eq!(format_sig5(123456789.0), "1.2346e8");
        assert_eq!(format_sig5(0.0), "0");
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![
            record(0, Estimator::Em, Some(0.1 + 0.2)),
            record(1, Estimator::BbslHard, None),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&records, &path, ReportFormat::Csv).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), records);
    }

    #[test]
    fn identical_methods_tie() {
        let mut records = Vec::new();
        for t in 0..10 {
            let v = 0.01 * (t + 1) as f64;
            records.push(record(t, Estimator::Em, Some(v)));
            records.push(record(t, Estimator::EmDirect, Some(v)));
        }
        let cells = summarize(&records, SummaryMetric::Mse);
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.bold));
        assert!(cells.iter().all(|c| c.median_rank == Some(0.5)));
    }

    #[test]
    fn clearly_worse_method_is_not_bold() {
        let mut records = Vec::new();
        for t in 0..12 {
            let v = 0.01 * (t + 1) as f64;
            records.push(record(t, Estimator::Em, Some(v)));
            records.push(record(t, Estimator::BbslSoft, Some(2.0 * v)));
        }
        let cells = summarize(&records, SummaryMetric::Mse);
        let bbsl = cells.iter().find(|c| c.estimator == Some(Estimator::BbslSoft)).unwrap();
        assert!(!bbsl.bold);
        assert!(bbsl.p_value.unwrap() < SIGNIFICANCE);
        assert_eq!(bbsl.median_rank, Some(1.0));
        let md = render_markdown(&cells);
        assert_eq!(md.matches("| EM |").count(), 1);
        assert_eq!(md.matches("| BBSL-soft |").count(), 1);
        assert!(md.contains("**0.065000; 0**"));
    }
}
