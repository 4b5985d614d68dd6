use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::run::{Aggregate, TraceRow};
use super::HarnessError;

pub const CSV_HEADER: [&str; 8] = ["trial", "epoch", "f", "grad_norm", "g_norm", "e_norm", "step", "mode"];

/// A parsed CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub trial: u64,
    pub epoch: u64,
    pub f: Option<f64>,
    pub grad_norm: Option<f64>,
    pub g_norm: f64,
    pub e_norm: Option<f64>,
    pub step: f64,
    pub mode: String,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Shortest representation that parses back to the same `f64`.
fn float(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

pub fn write_csv(rows: &[TraceRow], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(CSV_HEADER).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record([
            r.trial.to_string(),
            r.epoch.to_string(),
            opt(r.f),
            opt(r.grad_norm),
            float(r.g_norm),
            opt(r.e_norm),
            float(r.step),
            r.mode.as_str().to_string(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Csv(format!("unexpected header in {}", path.display())));
    }
    let bad = |line: usize, what: &str| HarnessError::Csv(format!("{}: line {line}: bad {what}", path.display()));
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = i + 2;
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(line, CSV_HEADER[k]));
        let maybe = |k: usize| if rec[k].is_empty() { Ok(None) } else { num(k).map(Some) };
        out.push(CsvRow {
            trial: rec[0].parse().map_err(|_| bad(line, "trial"))?,
            epoch: rec[1].parse().map_err(|_| bad(line, "epoch"))?,
            f: maybe(2)?,
            grad_norm: maybe(3)?,
            g_norm: num(4)?,
            e_norm: maybe(5)?,
            step: num(6)?,
            mode: rec[7].to_string(),
        });
    }
    Ok(out)
}

pub fn write_json(aggregate: &Aggregate, path: &Path) -> Result<(), HarnessError> {
    let mut file = File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(aggregate.to_json().as_bytes()).map_err(|e| io_err(path, e))
}
