//! Logit dataset files.
//!
//! CSV: header `label,logit_0,...,logit_{m-1}`, one example per line.
//! JSON lines: one object per line with the same field names.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calibration::LabeledLogitSet;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ProbMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    #[serde(alias = "jsonl")]
    JsonLines,
}

impl DatasetFormat {
    /// `.jsonl`/`.ndjson` are JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => DatasetFormat::JsonLines,
            _ => DatasetFormat::Csv,
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DatasetFormat::Csv),
            "jsonl" | "jsonlines" | "json-lines" | "ndjson" => Ok(DatasetFormat::JsonLines),
            _ => Err(Error::invalid(format!("unknown dataset format '{s}'"))),
        }
    }
}

/// Rows read from a file; labels are `None` where the label field is empty.
struct RawRows {
    classes: usize,
    logits: Vec<f64>,
    labels: Vec<Option<usize>>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_label(text: &str, line: usize) -> Result<Option<usize>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    text.parse::<usize>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("label '{text}' is not a non-negative integer"),
    })
}

fn parse_logit(text: &str, line: usize, row: usize, col: usize) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("logit_{col} '{}' is not a number", text.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Validation {
            row,
            message: format!("logit_{col} is {v}"),
        });
    }
    Ok(v)
}

fn check_header(fields: &[String]) -> Result<usize> {
    if fields.first().map(String::as_str) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with 'label'".into(),
        });
    }
    for (i, f) in fields[1..].iter().enumerate() {
        if *f != format!("logit_{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column 'logit_{i}', found '{f}'"),
            });
        }
    }
    if fields.len() < 3 {
        return Err(Error::Parse {
            line: 1,
            message: "need at least two logit columns".into(),
        });
    }
    Ok(fields.len() - 1)
}

fn read_csv(path: &Path) -> Result<RawRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "file is empty".into(),
            })
        }
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
    };
    let classes = check_header(&header.iter().map(str::to_owned).collect::<Vec<_>>())?;
    let mut raw = RawRows {
        classes,
        logits: Vec::new(),
        labels: Vec::new(),
    };
    for (row, record) in records.enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| csv_error(e, line))?;
        if record.len() != classes + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", classes + 1, record.len()),
            });
        }
        raw.labels.push(parse_label(&record[0], line)?);
        for col in 0..classes {
            raw.logits.push(parse_logit(&record[col + 1], line, row, col)?);
        }
    }
    Ok(raw)
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn read_json_lines(path: &Path) -> Result<RawRows> {
    let reader = BufReader::new(open(path)?);
    let mut raw: Option<RawRows> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let classes = obj.keys().filter(|k| k.starts_with("logit_")).count();
        let target = raw.get_or_insert_with(|| RawRows {
            classes,
            logits: Vec::new(),
            labels: Vec::new(),
        });
        if classes != target.classes || classes < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} logit fields, found {classes}", target.classes),
            });
        }
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => Some(n.as_u64().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("label {n} is not a non-negative integer"),
            })? as usize),
            Some(other) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("label {other} is not a number"),
                })
            }
        };
        target.labels.push(label);
        for col in 0..classes {
            let v = obj
                .get(&format!("logit_{col}"))
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("missing or non-numeric logit_{col}"),
                })?;
            target.logits.push(v);
        }
    }
    raw.ok_or(Error::Parse {
        line: 1,
        message: "file is empty".into(),
    })
}

fn read_raw(path: &Path, format: DatasetFormat) -> Result<RawRows> {
    let raw = match format {
        DatasetFormat::Csv => read_csv(path)?,
        DatasetFormat::JsonLines => read_json_lines(path)?,
    };
    if raw.labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(raw)
}

/// Reads a labelled logit set; every row must carry a valid label.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<LabeledLogitSet> {
    let raw = read_raw(path.as_ref(), format)?;
    let mut labels = Vec::with_capacity(raw.labels.len());
    for (row, label) in raw.labels.iter().enumerate() {
        let y = label.ok_or_else(|| Error::Validation {
            row,
            message: "missing label".into(),
        })?;
        labels.push(y);
    }
    let logits = Matrix::new(labels.len(), raw.classes, raw.logits)?;
    LabeledLogitSet::new(logits, labels)
}

/// Reads logits only; labels may be empty and are ignored.
pub fn load_logits(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Matrix> {
    let raw = read_raw(path.as_ref(), format)?;
    Matrix::new(raw.labels.len(), raw.classes, raw.logits)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_dataset(set: &LabeledLogitSet, path: impl AsRef<Path>, format: DatasetFormat) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let m = set.classes();
    let io = |e| Error::io(path, e);
    match format {
        DatasetFormat::Csv => {
            let header: Vec<String> = std::iter::once("label".to_string())
                .chain((0..m).map(|i| format!("logit_{i}")))
                .collect();
            writeln!(out, "{}", header.join(",")).map_err(io)?;
            for (row, y) in set.logits().iter_rows().zip(set.labels()) {
                let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{y},{}", fields.join(",")).map_err(io)?;
            }
        }
        DatasetFormat::JsonLines => {
            for (row, y) in set.logits().iter_rows().zip(set.labels()) {
                let mut obj = Map::new();
                obj.insert("label".into(), Value::from(*y));
                for (i, v) in row.iter().enumerate() {
                    obj.insert(format!("logit_{i}"), Value::from(*v));
                }
                writeln!(out, "{}", Value::Object(obj)).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

/// Writes probabilities as CSV with header `prob_0,...`.
pub fn write_probabilities(probs: &ProbMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    write_probabilities_to(probs, &mut out).map_err(io)?;
    out.flush().map_err(io)
}

pub fn write_probabilities_to<W: Write>(probs: &ProbMatrix, out: &mut W) -> std::io::Result<()> {
    let header: Vec<String> = (0..probs.classes()).map(|i| format!("prob_{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in probs.iter_rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
