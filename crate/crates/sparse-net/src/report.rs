//! Report files behind the selection figures.
//!
//! Metrics (one row per replicate and method):
//! `replicate_id,method,lambda,zeta,fpr,fnr,exact_recovery,status`
//!
//! Frequencies (one row per feature, 1-based index):
//! `feature_index,feature_name,frequency_gl,frequency_gl_agl`
//!
//! Missing values are empty cells in CSV and `null` in JSON. CSV floats are
//! written with 17 significant digits. JSON holds the same records as an
//! array of objects.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::harness::{FrequencyTable, SelectionMetrics, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidConfig(format!("unknown report format `{s}`"))),
        }
    }
}

pub const METRICS_COLUMNS: [&str; 8] = [
    "replicate_id",
    "method",
    "lambda",
    "zeta",
    "fpr",
    "fnr",
    "exact_recovery",
    "status",
];

pub const FREQUENCY_COLUMNS: [&str; 4] = [
    "feature_index",
    "feature_name",
    "frequency_gl",
    "frequency_gl_agl",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub replicate_id: usize,
    pub method: Method,
    pub lambda: Option<f64>,
    pub zeta: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub exact_recovery: Option<bool>,
    pub status: String,
}

impl From<&SelectionMetrics> for MetricsRecord {
    fn from(m: &SelectionMetrics) -> Self {
        MetricsRecord {
            replicate_id: m.replicate_id,
            method: m.method,
            lambda: m.lambda,
            zeta: m.zeta,
            fpr: m.false_positive_rate,
            fnr: m.false_negative_rate,
            exact_recovery: m.exact_recovery,
            status: match &m.status {
                Status::Ok => "ok".to_string(),
                Status::Failed(msg) => format!("failed: {}", sanitize(msg)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyRecord {
    pub feature_index: usize,
    pub feature_name: String,
    pub frequency_gl: Option<f64>,
    pub frequency_gl_agl: Option<f64>,
}

pub fn frequency_records(table: &FrequencyTable) -> Vec<FrequencyRecord> {
    table
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| FrequencyRecord {
            feature_index: j + 1,
            feature_name: name.clone(),
            frequency_gl: table.gl.as_ref().map(|s| s.frequency[j]),
            frequency_gl_agl: table.gl_agl.as_ref().map(|s| s.frequency[j]),
        })
        .collect()
}

// cells are never quoted, so separators and line breaks are replaced
fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn metrics_csv(rows: &[MetricsRecord]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let cells = [
            r.replicate_id.to_string(),
            r.method.to_string(),
            opt_f64(r.lambda),
            opt_f64(r.zeta),
            opt_f64(r.fpr),
            opt_f64(r.fnr),
            r.exact_recovery.map(|b| b.to_string()).unwrap_or_default(),
            sanitize(&r.status),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn frequency_csv(rows: &[FrequencyRecord]) -> String {
    let mut out = FREQUENCY_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let cells = [
            r.feature_index.to_string(),
            sanitize(&r.feature_name),
            opt_f64(r.frequency_gl),
            opt_f64(r.frequency_gl_agl),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn to_json<T: Serialize>(rows: &[T]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("records serialize");
    s.push('\n');
    s
}

pub fn write_metrics(path: &Path, metrics: &[SelectionMetrics], format: Format) -> Result<()> {
    let rows: Vec<MetricsRecord> = metrics.iter().map(MetricsRecord::from).collect();
    let text = match format {
        Format::Csv => metrics_csv(&rows),
        Format::Json => to_json(&rows),
    };
    write_file(path, &text)
}

pub fn write_frequencies(path: &Path, table: &FrequencyTable, format: Format) -> Result<()> {
    let rows = frequency_records(table);
    let text = match format {
        Format::Csv => frequency_csv(&rows),
        Format::Json => to_json(&rows),
    };
    write_file(path, &text)
}

fn parse_cell<T: FromStr>(path: &Path, row: usize, name: &str, cell: &str) -> Result<Option<T>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        detail: format!("column `{name}`: cannot parse `{cell}`"),
    })
}

fn read_rows(path: &Path, expected: &[&str]) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.split(',').ne(expected.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unexpected header `{header}`"),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<String> = line.split(',').map(str::to_string).collect();
            if cells.len() != expected.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: i + 1,
                    detail: format!("expected {} cells, found {}", expected.len(), cells.len()),
                });
            }
            Ok(cells)
        })
        .collect()
}

fn required<T>(path: &Path, row: usize, name: &str, v: Option<T>) -> Result<T> {
    v.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row,
        detail: format!("column `{name}` is empty"),
    })
}

pub fn read_metrics(path: &Path, format: Format) -> Result<Vec<MetricsRecord>> {
    if format == Format::Json {
        return read_json(path);
    }
    read_rows(path, &METRICS_COLUMNS)?
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let row = i + 1;
            let p = |j: usize| c[j].as_str();
            Ok(MetricsRecord {
                replicate_id: required(path, row, "replicate_id", parse_cell(path, row, "replicate_id", p(0))?)?,
                method: required(path, row, "method", parse_cell(path, row, "method", p(1))?)?,
                lambda: parse_cell(path, row, "lambda", p(2))?,
                zeta: parse_cell(path, row, "zeta", p(3))?,
                fpr: parse_cell(path, row, "fpr", p(4))?,
                fnr: parse_cell(path, row, "fnr", p(5))?,
                exact_recovery: parse_cell(path, row, "exact_recovery", p(6))?,
                status: c[7].clone(),
            })
        })
        .collect()
}

pub fn read_frequencies(path: &Path, format: Format) -> Result<Vec<FrequencyRecord>> {
    if format == Format::Json {
        return read_json(path);
    }
    read_rows(path, &FREQUENCY_COLUMNS)?
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let row = i + 1;
            Ok(FrequencyRecord {
                feature_index: required(path, row, "feature_index", parse_cell(path, row, "feature_index", &c[0])?)?,
                feature_name: c[1].clone(),
                frequency_gl: parse_cell(path, row, "frequency_gl", &c[2])?,
                frequency_gl_agl: parse_cell(path, row, "frequency_gl_agl", &c[3])?,
            })
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
