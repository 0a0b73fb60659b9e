//! Matrix and vector file I/O.
//!
//! Two formats are accepted and distinguished by content, not extension:
//!
//! * `DMAT1`: magic bytes `DMAT`, then rows and cols as little-endian u64,
//!   then `rows * cols` little-endian f64 in row-major order. Vectors are
//!   one-column files.
//! * CSV: headerless, comma-separated decimal rows. Vectors are one value
//!   per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DenseMatrix, DenseVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DMAT";

/// Writes a matrix in the DMAT1 binary format.
pub fn write_dmat(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a vector as a one-column DMAT1 file.
pub fn write_dmat_vector(path: &Path, v: &DenseVector) -> Result<()> {
    let m = DenseMatrix::new(v.len(), 1, v.as_slice().to_vec())?;
    write_dmat(path, &m)
}

fn read_dmat_bytes(bytes: &[u8], path: &Path) -> Result<DenseMatrix> {
    let bad = |msg: &str| Error::InvalidData(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 {
        return Err(bad("truncated DMAT1 header"));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| bad("DMAT1 dimensions overflow"))?;
    if bytes.len() != need {
        return Err(bad(&format!(
            "DMAT1 payload has {} bytes, expected {}",
            bytes.len() - 20,
            need - 20
        )));
    }
    let data = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows, cols, data)
}

fn read_csv_text(text: &str, path: &Path) -> Result<DenseMatrix> {
    let bad = |msg: String| Error::InvalidData(format!("{}: {msg}", path.display()));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad number {:?}", lineno + 1, cell.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(bad(format!(
                    "line {}: ragged row ({} cells, expected {})",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad("empty CSV".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    DenseMatrix::new(r, c, rows.into_iter().flatten().collect())
}

/// Loads a matrix, sniffing the format from the leading bytes.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.starts_with(MAGIC) {
        read_dmat_bytes(&bytes, path)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::InvalidData(format!("{}: neither DMAT1 nor UTF-8 CSV", path.display())))?;
        read_csv_text(text, path)
    }
}

/// Loads a vector: a one-column (or one-row) matrix flattened to length n.
pub fn load_vector(path: &Path) -> Result<DenseVector> {
    let m = load_matrix(path)?;
    if m.cols() == 1 || m.rows() == 1 {
        Ok(DenseVector::new(m.as_slice().to_vec()))
    } else {
        Err(Error::InvalidData(format!(
            "{}: expected a vector, got a {}x{} matrix",
            path.display(),
            m.rows(),
            m.cols()
        )))
    }
}

/// Writes a matrix as headerless CSV.
pub fn write_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.rows() {
        let row = m.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            // RFC-style shortest roundtrip formatting of f64.
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
