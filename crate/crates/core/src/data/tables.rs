//! CSV tables for query input/output and reports.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn csv_err(e: csv::Error) -> Error {
    Error::input(format!("csv: {e}"))
}

/// Reads a table whose header must contain `columns`; returns them in that order.
pub fn read_columns<R: Read>(reader: R, columns: &[&str]) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| Error::input(format!("missing column {c:?}")))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (&i, name) in idx.iter().zip(columns) {
            let field = rec.get(i).unwrap_or("");
            let v: f64 = field
                .parse()
                .map_err(|_| Error::input(format!("row {}: bad {name} value {field:?}", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::input(format!("row {}: non-finite {name}", line + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, columns.len(), data)
}

pub fn read_coords<R: Read>(reader: R) -> Result<Matrix> {
    read_columns(reader, &["x", "y", "z"])
}

/// Writes `header` then the rows of the horizontally joined `blocks`.
pub fn write_table<W: Write>(writer: W, header: &[&str], blocks: &[&Matrix]) -> Result<()> {
    let width: usize = blocks.iter().map(|b| b.cols()).sum();
    if width != header.len() {
        return Err(Error::config(format!("{} headers for {width} columns", header.len())));
    }
    let rows = blocks.first().map_or(0, |b| b.rows());
    if blocks.iter().any(|b| b.rows() != rows) {
        return Err(Error::config("table blocks have different row counts"));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(header).map_err(csv_err)?;
    let mut rec = Vec::with_capacity(width);
    for r in 0..rows {
        rec.clear();
        for b in blocks {
            rec.extend(b.row(r).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const QUERY_HEADER: [&str; 8] = ["x", "y", "z", "rho", "p", "vx", "vy", "vz"];
pub const HISTORY_HEADER: [&str; 4] = ["epoch", "train_loss", "val_loss", "lr"];

pub fn write_query<W: Write>(writer: W, coords: &Matrix, features: &Matrix) -> Result<()> {
    write_table(writer, &QUERY_HEADER, &[coords, features])
}
