//! CSV matrices and JSON reports.
//!
//! Matrices are plain comma-separated numbers, one row per sample. A single
//! header row is allowed and detected by its first record not parsing as numbers.
//! Values are written with the shortest representation that round-trips exactly.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stein::SampleSet;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Parses a numeric CSV matrix, skipping one header row if present.
pub fn parse_matrix_csv<R: Read>(input: R, name: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{name}: {e}")))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(_) => {
                let bad = rec.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or_default();
                return Err(Error::Parse(format!("{name}: line {}: '{bad}' is not a number", line + 1)));
            }
        }
    }
    let Some(first) = rows.first() else {
        return Err(Error::Parse(format!("{name}: no numeric rows")));
    };
    let cols = first.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::Parse(format!(
            "{name}: row {} has {} fields, expected {cols}",
            i + 1,
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(open(path)?, &path.display().to_string())
}

pub fn write_matrix_csv<W: Write>(out: W, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    if let Some(h) = header {
        w.write_record(h).map_err(io)?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv_file(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_matrix_csv(BufWriter::new(f), m, header)
}

/// Reads matching sample and gradient files.
pub fn read_samples(samples: &Path, grads: &Path) -> Result<SampleSet> {
    let thetas = read_matrix_csv(samples)?;
    let g = read_matrix_csv(grads)?;
    if thetas.nrows() != g.nrows() {
        return Err(Error::DimensionMismatch {
            what: "gradient rows",
            expected: thetas.nrows(),
            found: g.nrows(),
        });
    }
    if thetas.ncols() != g.ncols() {
        return Err(Error::DimensionMismatch {
            what: "gradient columns",
            expected: thetas.ncols(),
            found: g.ncols(),
        });
    }
    SampleSet::new(thetas, g)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `text` to `path`, or to stdout when `path` is `None` or `-`.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
        }
        _ => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
            lock.flush()?;
            Ok(())
        }
    }
}
