//! Artifact formats: CSV traces, per-replication and summary tables, and the
//! JSON report.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64` exactly; absent fields are empty.

use std::io::{Read, Write};
use std::path::Path;

use agopt_core::algorithms::RunTrace;
use serde::{Serialize, Serializer};

use crate::error::{io_err, Error, Result};

pub const TRACE_HEADER: [&str; 11] = [
    "k",
    "alpha",
    "beta",
    "lambda",
    "gamma",
    "m_k",
    "psi_md",
    "psi_ag",
    "phi_ag",
    "grad_norm_md",
    "gradmap_norm",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One CSV row of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub m_k: Option<u64>,
    pub psi_md: f64,
    pub psi_ag: f64,
    pub phi_ag: Option<f64>,
    pub grad_norm_md: f64,
    pub gradmap_norm: Option<f64>,
}

impl TraceRow {
    fn fields(&self) -> [String; 11] {
        [
            self.k.to_string(),
            fmt_f64(self.alpha),
            fmt_f64(self.beta),
            fmt_f64(self.lambda),
            fmt_opt(self.gamma),
            self.m_k.map(|m| m.to_string()).unwrap_or_default(),
            fmt_f64(self.psi_md),
            fmt_f64(self.psi_ag),
            fmt_opt(self.phi_ag),
            fmt_f64(self.grad_norm_md),
            fmt_opt(self.gradmap_norm),
        ]
    }
}

pub fn trace_rows(trace: &RunTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            k: r.k,
            alpha: r.alpha,
            beta: r.beta,
            lambda: r.lambda,
            gamma: r.gamma,
            m_k: r.m_k,
            psi_md: r.psi_md,
            psi_ag: r.psi_ag,
            phi_ag: r.phi_ag,
            grad_norm_md: r.grad_norm_md,
            gradmap_norm: r.gradmap_norm,
        })
        .collect()
}

pub fn write_trace_rows<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_trace<W: Write>(trace: &RunTrace, out: W) -> Result<()> {
    write_trace_rows(&trace_rows(trace), out)
}

pub fn emit_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_trace(trace, std::io::BufWriter::new(file))
}

fn parse_num<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {col} value '{s}'")))
}

fn parse_opt<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num(s, col, line).map(Some)
    }
}

pub fn read_trace_rows<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |j: usize| rec.get(j).unwrap_or("");
        rows.push(TraceRow {
            k: parse_num(f(0), "k", line)?,
            alpha: parse_num(f(1), "alpha", line)?,
            beta: parse_num(f(2), "beta", line)?,
            lambda: parse_num(f(3), "lambda", line)?,
            gamma: parse_opt(f(4), "gamma", line)?,
            m_k: parse_opt(f(5), "m_k", line)?,
            psi_md: parse_num(f(6), "psi_md", line)?,
            psi_ag: parse_num(f(7), "psi_ag", line)?,
            phi_ag: parse_opt(f(8), "phi_ag", line)?,
            grad_norm_md: parse_num(f(9), "grad_norm_md", line)?,
            gradmap_norm: parse_opt(f(10), "gradmap_norm", line)?,
        });
    }
    Ok(rows)
}

/// Writes a table with the given header; every row must match its width.
pub fn write_table<W: Write>(header: &[&str], rows: &[Vec<String>], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_table_file(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_table(header, rows, std::io::BufWriter::new(file))
}

/// Serializes finite floats as numbers and non-finite ones as `"inf"`,
/// `"-inf"` or `"nan"`, which JSON cannot represent natively.
pub fn float_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}
