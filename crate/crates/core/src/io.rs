//! CSV reading and writing for point clouds, measures, permutations, couplings and cost
//! matrices. Values are written with 17 significant digits, so a write followed by a read
//! reproduces every `f64` exactly.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::assignment::Permutation;
use crate::measures::{AtomicMeasure, Coupling, PointCloud};
use crate::{Error, Result};

/// Coupling entries below this mass are omitted from the output.
pub const COUPLING_WRITE_THRESHOLD: f64 = 1e-15;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Numeric rows of a CSV source. A first row whose first cell does not parse as a number
/// is taken as a header. Rows must all have the same number of cells.
fn read_rows<R: Read>(reader: R, name: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(k + 1, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if k == 0 && rec.get(0).is_some_and(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                line,
                column: rec.len().min(w) + 1,
                message: format!("expected {w} cells, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(w);
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: c + 1,
                    message: format!("`{cell}` is not finite"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::NoRows(name.to_string()));
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// One point per row, header `x1,…,xd` optional.
pub fn read_point_cloud_from<R: Read>(reader: R, name: &str) -> Result<PointCloud<f64>> {
    PointCloud::from_rows(&read_rows(reader, name)?)
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud<f64>> {
    read_point_cloud_from(open(path)?, &path.display().to_string())
}

pub fn write_point_cloud<W: Write>(pc: &PointCloud<f64>, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record((1..=pc.d()).map(|j| format!("x{j}"))).map_err(csv_err)?;
    for row in pc.rows() {
        out.write_record(row.iter().map(|&v| fmt(v))).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `w,x1,…,xd`; the first column holds the weights.
pub fn read_measure_from<R: Read>(reader: R, name: &str) -> Result<AtomicMeasure<f64>> {
    let rows = read_rows(reader, name)?;
    if rows[0].len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "a measure needs a weight column and at least one coordinate".into(),
        });
    }
    let weights = Array1::from_iter(rows.iter().map(|r| r[0]));
    let atoms: Vec<Vec<f64>> = rows.iter().map(|r| r[1..].to_vec()).collect();
    AtomicMeasure::new(PointCloud::from_rows(&atoms)?, weights)
}

pub fn read_measure(path: &Path) -> Result<AtomicMeasure<f64>> {
    read_measure_from(open(path)?, &path.display().to_string())
}

pub fn write_measure<W: Write>(m: &AtomicMeasure<f64>, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(std::iter::once("w".to_string()).chain((1..=m.d()).map(|j| format!("x{j}"))))
        .map_err(csv_err)?;
    for (wt, row) in m.weights().iter().zip(m.atoms().rows()) {
        out.write_record(std::iter::once(fmt(*wt)).chain(row.iter().map(|&v| fmt(v))))
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `pi`, then `π(i)` for `i = 0, 1, …` (zero-based).
pub fn write_permutation<W: Write>(p: &Permutation, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["pi"]).map_err(csv_err)?;
    for &v in p.as_slice() {
        out.write_record([v.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_permutation_from<R: Read>(reader: R, name: &str) -> Result<Permutation> {
    let rows = read_rows(reader, name)?;
    let mut map = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        if r.len() != 1 || r[0] < 0.0 || r[0].fract() != 0.0 {
            return Err(Error::Parse {
                line: k + 2,
                column: 1,
                message: "expected one nonnegative integer per row".into(),
            });
        }
        map.push(r[0] as usize);
    }
    Permutation::new(map)
}

pub fn read_permutation(path: &Path) -> Result<Permutation> {
    read_permutation_from(open(path)?, &path.display().to_string())
}

/// Sparse triplets `i,j,mass`, omitting entries below [`COUPLING_WRITE_THRESHOLD`].
pub fn write_coupling<W: Write>(c: &Coupling<f64>, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["i", "j", "mass"]).map_err(csv_err)?;
    for (i, j, m) in c.triplets(COUPLING_WRITE_THRESHOLD) {
        out.write_record([i.to_string(), j.to_string(), fmt(m)]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Dense matrix, one row per line, no header.
pub fn write_matrix<W: Write>(m: &Array2<f64>, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    for row in m.outer_iter() {
        out.write_record(row.iter().map(|&v| fmt(v))).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_from<R: Read>(reader: R, name: &str) -> Result<Array2<f64>> {
    let rows = read_rows(reader, name)?;
    let (n, p) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_vec((n, p), rows.concat()).expect("rectangular rows"))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    read_matrix_from(open(path)?, &path.display().to_string())
}
