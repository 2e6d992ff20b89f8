//! Wide panel CSV: `time,subject_1,…,subject_d`, one row per observation
//! time, `#` lines as a free-form preamble.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::StudyDesign;
use crate::simulate::PathPanel;

/// 17 significant digits, enough to round-trip every f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Prefix every line of `text` with `# `.
pub fn comment_block(text: &str) -> String {
    text.lines().map(|l| if l.is_empty() { "#\n".to_string() } else { format!("# {l}\n") }).collect()
}

pub fn panel_to_csv(panel: &PathPanel, preamble: &str) -> String {
    let mut out = comment_block(preamble);
    out.push_str("time");
    for i in 0..panel.n_subjects() {
        out.push_str(&format!(",subject_{}", i + 1));
    }
    out.push('\n');
    for (j, t) in panel.grid().iter().enumerate() {
        out.push_str(&fmt_f64(*t));
        for row in panel.values() {
            out.push(',');
            out.push_str(&fmt_f64(row[j]));
        }
        out.push('\n');
    }
    out
}

pub fn write_panel_csv(path: &Path, panel: &PathPanel, preamble: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, panel_to_csv(panel, preamble))?;
    Ok(())
}

pub fn read_panel_csv(path: &Path) -> Result<PathPanel> {
    let text = fs::read_to_string(path)?;
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("panel");
    parse_panel_csv(&text, path, label)
}

/// Parse panel CSV text; `path` only labels diagnostics.
pub fn parse_panel_csv(text: &str, path: &Path, label: &str) -> Result<PathPanel> {
    let err = |line: u64, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let header_line = header.position().map_or(1, |p| p.line());
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first().copied() != Some("time") {
        return Err(err(header_line, 1, "header must start with a `time` column".into()));
    }
    if names.len() < 2 {
        return Err(err(header_line, 1, "header names no subject columns".into()));
    }
    for (k, name) in names.iter().enumerate().skip(1) {
        if name.is_empty() {
            return Err(err(header_line, k + 1, "empty subject name".into()));
        }
        if names[1..k].contains(name) {
            return Err(err(header_line, k + 1, format!("duplicate subject name `{name}`")));
        }
    }
    let d = names.len() - 1;
    let mut times: Vec<f64> = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut first_line = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != d + 1 {
            return Err(err(line, rec.len().min(d + 1), format!("row has {} fields, header has {}", rec.len(), d + 1)));
        }
        let cell = |k: usize| -> Result<f64> {
            let raw = rec[k].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, k + 1, format!("`{raw}` is not a finite decimal number")))
        };
        let t = cell(0)?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(err(line, 1, format!("time {t} does not exceed the previous time {prev}")));
            }
        } else {
            first_line = line;
        }
        times.push(t);
        for (k, col) in cols.iter_mut().enumerate() {
            let v = cell(k + 1)?;
            if v <= 0.0 {
                return Err(err(line, k + 2, format!("value {v} for `{}` is not positive", names[k + 1])));
            }
            col.push(v);
        }
    }
    if times.len() < 2 {
        return Err(err(header_line, 1, format!("panel needs at least 2 observation times, got {}", times.len())));
    }
    let x0 = cols[0][0];
    if let Some(k) = cols.iter().position(|c| c[0] != x0) {
        return Err(err(
            first_line,
            k + 2,
            format!("all subjects must share the initial value; `{}` has {} instead of {x0}", names[k + 1], cols[k][0]),
        ));
    }
    let design = StudyDesign::new(times, x0).map_err(|e| err(header_line, 1, e.to_string()))?;
    PathPanel::new(design, cols, label)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (line, column) = e.position().map(|p| (p.line() as usize, 0)).unwrap_or((0, 0));
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PathPanel> {
        parse_panel_csv(text, Path::new("p.csv"), "p")
    }

    fn position(e: Error) -> (usize, usize) {
        match e {
            Error::Parse { line, column, .. } => (line, column),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn reads_small_panel() {
        let p = parse("# note\ntime,a,b\n0,1,1\n1,1.5,2\n3,2.5,3\n").unwrap();
        assert_eq!((p.n_subjects(), p.n_times()), (2, 3));
        assert_eq!(p.values()[1], vec![1.0, 2.0, 3.0]);
        assert_eq!(p.grid(), &[0.0, 1.0, 3.0]);
    }

    #[test]
    fn reports_line_and_column() {
        assert_eq!(position(parse("# c\ntime,a,b\n0,1,1\n1,0,2\n").unwrap_err()), (4, 2));
        assert_eq!(position(parse("time,a,b\n0,1,1\n1,2,x\n").unwrap_err()), (3, 3));
        assert_eq!(position(parse("time,a,b\n0,1,1\n0,2,2\n").unwrap_err()), (3, 1));
        assert_eq!(position(parse("time,a,b\n0,1,1\n1,2\n").unwrap_err()).0, 3);
        assert_eq!(position(parse("t,a\n0,1\n1,2\n").unwrap_err()), (1, 1));
        assert_eq!(position(parse("time,a,a\n0,1,1\n1,2,2\n").unwrap_err()), (1, 3));
        assert_eq!(position(parse("time,a,b\n0,1,2\n1,2,2\n").unwrap_err()), (2, 3));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let design = StudyDesign::new(vec![0.0, 0.1, 1.0 / 3.0], 1.0).unwrap();
        let vals = vec![vec![1.0, 1.0 + 1e-15, std::f64::consts::PI], vec![1.0, 2.0f64.sqrt(), 1e-300]];
        let p = PathPanel::new(design, vals, "p").unwrap();
        let back = parse(&panel_to_csv(&p, "seed = 1\n\n[x]")).unwrap();
        assert_eq!(back, p);
    }
}
