use std::io::Write;

use serde::{Deserialize, Serialize};

use cyclotrace::analytic::{format_float, Method, TraceReport};

/// One row of `trace --json` and `table` output. CSV and JSON share the
/// field names and the textual values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub k: u32,
    #[serde(rename = "D")]
    pub big_d: i64,
    pub d: i64,
    pub method: String,
    pub value: String,
    pub error_estimate: String,
    pub hypothesis_ok: bool,
    pub seconds: String,
}

impl Row {
    pub fn from_report(r: &TraceReport, timing: bool) -> Row {
        Row {
            k: r.k,
            big_d: r.big_d,
            d: r.d,
            method: r.method.name().to_string(),
            value: r.value.to_string(),
            error_estimate: format_float(r.error_estimate),
            hypothesis_ok: r.hypothesis_ok,
            seconds: format_float(if timing { r.seconds } else { 0.0 }),
        }
    }

    pub fn rejected(k: u32, big_d: i64, d: i64, method: Method) -> Row {
        Row {
            k,
            big_d,
            d,
            method: method.name().to_string(),
            value: String::new(),
            error_estimate: String::new(),
            hypothesis_ok: false,
            seconds: format_float(0.0),
        }
    }
}

pub const CSV_HEADER: [&str; 8] = ["k", "D", "d", "method", "value", "error_estimate", "hypothesis_ok", "seconds"];

pub fn write_csv<W: Write>(out: W, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(mut out: W, rows: &[Row]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out)
}

pub fn write_text<W: Write>(mut out: W, rows: &[Row], timing: bool) -> std::io::Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "method: {}", row.method)?;
        writeln!(out, "value: {}", row.value)?;
        writeln!(out, "error_estimate: {}", row.error_estimate)?;
        writeln!(out, "hypothesis_ok: {}", row.hypothesis_ok)?;
        if timing {
            writeln!(out, "seconds: {}", row.seconds)?;
        }
    }
    Ok(())
}
