//! Trace CSV files: a `schema=N` line, a header, one row per record.
//! Floats use 17 significant digits so values round-trip exactly; empty
//! cells mean "not computed".

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{io_err, HarnessError};
use crate::solvers::TraceRecord;

pub const CSV_SCHEMA: u32 = 1;

const BASE_HEADER: &str = "t,oracle_count,diag_oracle_count,primal,res_x,res_y,err_x,err_y,phi,wall_s";

fn opt(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        write!(out, "{v:.16e}").unwrap();
    }
}

/// Renders records as CSV text. `with_accuracy` adds the trailing
/// `accuracy` column; without `with_wall_time` the `wall_s` cells are empty.
pub fn trace_to_csv(records: &[TraceRecord], with_accuracy: bool, with_wall_time: bool) -> String {
    let mut out = format!("schema={CSV_SCHEMA}\n{BASE_HEADER}");
    if with_accuracy {
        out.push_str(",accuracy");
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.t, r.oracle_count, r.diag_oracle_count).unwrap();
        opt(&mut out, r.primal);
        opt(&mut out, Some(r.res_x));
        opt(&mut out, Some(r.res_y));
        opt(&mut out, r.err_x);
        opt(&mut out, r.err_y);
        opt(&mut out, r.phi);
        opt(&mut out, if with_wall_time { r.wall_s } else { None });
        if with_accuracy {
            opt(&mut out, r.accuracy);
        }
        out.push('\n');
    }
    out
}

pub fn write_trace(
    path: &Path,
    records: &[TraceRecord],
    with_accuracy: bool,
    with_wall_time: bool,
) -> Result<(), HarnessError> {
    fs::write(path, trace_to_csv(records, with_accuracy, with_wall_time)).map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, msg: String| HarnessError::Trace { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == format!("schema={CSV_SCHEMA}") => {}
        other => return Err(bad(1, format!("expected schema={CSV_SCHEMA}, found {other:?}"))),
    }
    let header = lines.next().ok_or_else(|| bad(2, "missing header".into()))?;
    let with_accuracy = if header == BASE_HEADER {
        false
    } else if header == format!("{BASE_HEADER},accuracy") {
        true
    } else {
        return Err(bad(2, format!("unexpected header {header:?}")));
    };
    let width = if with_accuracy { 11 } else { 10 };
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let no = k + 3;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(bad(no, format!("expected {width} cells, found {}", cells.len())));
        }
        let float = |i: usize| -> Result<Option<f64>, HarnessError> {
            if cells[i].is_empty() {
                Ok(None)
            } else {
                cells[i].parse().map(Some).map_err(|_| bad(no, format!("bad number {:?}", cells[i])))
            }
        };
        let int = |i: usize| -> Result<u64, HarnessError> {
            cells[i].parse().map_err(|_| bad(no, format!("bad integer {:?}", cells[i])))
        };
        let required = |i: usize| float(i)?.ok_or_else(|| bad(no, format!("empty required cell {i}")));
        out.push(TraceRecord {
            t: int(0)? as usize,
            oracle_count: int(1)?,
            diag_oracle_count: int(2)?,
            primal: float(3)?,
            res_x: required(4)?,
            res_y: required(5)?,
            err_x: float(6)?,
            err_y: float(7)?,
            phi: float(8)?,
            wall_s: float(9)?,
            accuracy: if with_accuracy { float(10)? } else { None },
        });
    }
    Ok(out)
}
