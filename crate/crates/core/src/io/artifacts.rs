//! Output artifacts and their readers. Every file starts with a `#`
//! preamble carrying the seed and the effective configuration.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::panel_csv::{comment_block, fmt_f64};
use crate::bootstrap::{KdeCurve, Target, TestResult};
use crate::error::{Error, Result};
use crate::inference::{FitResult, Ordering};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Numeric columns with a header row; empty cells are missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn from_columns(names: &[&str], columns: &[Vec<Option<f64>>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Validation("table columns must be named and of equal length".into()));
        }
        Ok(Self {
            columns: names.iter().map(|s| s.to_string()).collect(),
            rows: (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect(),
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self, preamble: &str) -> String {
        let mut out = comment_block(preamble);
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.map(fmt_f64).unwrap_or_default()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path, preamble: &str) -> Result<()> {
        write_text(path, &self.to_csv(preamble))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(text.as_bytes());
        let cerr = |e: csv::Error| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, 0, e.to_string())
        };
        let columns: Vec<String> = rdr.headers().map_err(cerr)?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(cerr)?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != columns.len() {
                return Err(parse_error(path, line, rec.len(), format!("expected {} fields", columns.len())));
            }
            let row = rec
                .iter()
                .enumerate()
                .map(|(k, cell)| match cell.trim() {
                    "" => Ok(None),
                    s => s
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| parse_error(path, line, k + 1, format!("`{s}` is not a number"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

pub fn write_toml<T: Serialize>(path: &Path, preamble: &str, value: &T) -> Result<()> {
    let body = toml::to_string(value).map_err(|e| Error::Config(format!("cannot serialize {}: {e}", path.display())))?;
    write_text(path, &format!("{}{body}", comment_block(preamble)))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| {
                let before = &text[..s.start];
                let line = before.matches('\n').count() + 1;
                (line, s.start - before.rfind('\n').map_or(0, |i| i + 1) + 1)
            })
            .unwrap_or((0, 0));
        parse_error(path, line, column, e.message())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEstimates {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
    pub n_transitions: usize,
    pub equation_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub c: String,
    pub d: String,
    pub v1: String,
    pub v2: String,
}

/// Contents of `params.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsArtifact {
    pub ordering: Ordering,
    pub control: ControlEstimates,
    pub profiles: ProfileSummary,
    /// Grid indices with m₂ < m₁ in the G1 and G2 sample curves.
    pub jensen_warnings_g1: Vec<usize>,
    pub jensen_warnings_g2: Vec<usize>,
    /// Grid indices excluded from smoothing, per function.
    pub guarded_c: Vec<usize>,
    pub guarded_d: Vec<usize>,
    pub guarded_v1: Vec<usize>,
    pub guarded_v2: Vec<usize>,
}

impl ParamsArtifact {
    pub fn from_fit(fit: &FitResult) -> Self {
        let p = fit.params();
        Self {
            ordering: fit.ordering,
            control: ControlEstimates {
                alpha: p.alpha,
                beta: p.beta,
                sigma: p.sigma,
                log_likelihood: fit.control.log_likelihood,
                n_transitions: fit.control.n_transitions,
                equation_residuals: fit.control.residuals.to_vec(),
            },
            profiles: ProfileSummary {
                c: fit.c.describe(),
                d: fit.d.describe(),
                v1: fit.v1.describe(),
                v2: fit.v2.describe(),
            },
            jensen_warnings_g1: fit.jensen_warnings[0].clone(),
            jensen_warnings_g2: fit.jensen_warnings[1].clone(),
            guarded_c: fit.raw_c.missing(),
            guarded_d: fit.raw_d.missing(),
            guarded_v1: fit.raw_v1.missing(),
            guarded_v2: fit.raw_v2.missing(),
        }
    }
}

/// Contents of one `tests/*.txt` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestArtifact {
    pub target: Target,
    pub hypothesis: String,
    pub statistic: f64,
    pub p_value: f64,
    pub level: f64,
    pub m: usize,
    /// Bootstrap seed as a decimal string (seeds use the full u64 range).
    pub seed: String,
    pub reject: bool,
    pub critical_value: f64,
    pub bandwidth: f64,
    pub control_refit: bool,
    pub retried: Vec<usize>,
    pub replicates: Vec<f64>,
}

impl TestArtifact {
    pub fn new(test: &TestResult, kde: &KdeCurve) -> Self {
        Self {
            target: test.hypothesis.target,
            hypothesis: test.hypothesis.describe(),
            statistic: test.statistic,
            p_value: test.p_value,
            level: test.level,
            m: test.m,
            seed: test.seed.to_string(),
            reject: test.reject,
            critical_value: kde.critical_value,
            bandwidth: kde.bandwidth,
            control_refit: test.hypothesis.control_paths.is_some(),
            retried: test.retried.clone(),
            replicates: test.replicates.clone(),
        }
    }
}

/// Contents of `tests/protocol.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolArtifact {
    pub ordering: Ordering,
    /// Test files in the order the tests ran.
    pub order: Vec<String>,
    pub log: Vec<String>,
    pub final_profiles: ProfileSummary,
}

/// One row of `mse.txt`; `replication` is `None` on median rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub function: String,
    pub replication: Option<usize>,
    pub mse: f64,
}

pub fn mse_to_text(rows: &[MseRow], preamble: &str) -> String {
    let mut out = comment_block(preamble);
    out.push_str("function replication mse\n");
    for r in rows {
        let rep = r.replication.map_or_else(|| "median".to_string(), |k| k.to_string());
        out.push_str(&format!("{} {} {}\n", r.function, rep, fmt_f64(r.mse)));
    }
    out
}

pub fn write_mse(path: &Path, rows: &[MseRow], preamble: &str) -> Result<()> {
    write_text(path, &mse_to_text(rows, preamble))
}

pub fn read_mse(path: &Path) -> Result<Vec<MseRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !header_seen {
            if fields != ["function", "replication", "mse"] {
                return Err(parse_error(path, line_no, 1, "expected header `function replication mse`"));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 3 {
            return Err(parse_error(path, line_no, 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let replication = match fields[1] {
            "median" => None,
            s => Some(s.parse().map_err(|_| parse_error(path, line_no, 2, format!("bad replication `{s}`")))?),
        };
        let mse = fields[2]
            .parse()
            .map_err(|_| parse_error(path, line_no, 3, format!("bad MSE `{}`", fields[2])))?;
        rows.push(MseRow {
            function: fields[0].to_string(),
            replication,
            mse,
        });
    }
    if !header_seen {
        return Err(parse_error(path, 1, 1, "missing header"));
    }
    Ok(rows)
}
