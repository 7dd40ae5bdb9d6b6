//! Matrix and vector export.
//!
//! Binary layout: four little-endian `u64` header words `(MAGIC, rows, cols, VERSION)`
//! followed by `rows·cols` little-endian `f64` values in row-major order.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::fmt_f64;

pub const MATRIX_MAGIC: u64 = 0x4d4f_4445_5252_4d31;
pub const MATRIX_VERSION: u64 = 1;

pub fn write_matrix_binary<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    for word in [MATRIX_MAGIC, m.nrows() as u64, m.ncols() as u64, MATRIX_VERSION] {
        out.write_all(&word.to_le_bytes())?;
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut word = [0u8; 8];
    let mut header = [0u64; 4];
    for h in header.iter_mut() {
        input.read_exact(&mut word)?;
        *h = u64::from_le_bytes(word);
    }
    if header[0] != MATRIX_MAGIC {
        return Err(Error::Format(format!("bad magic {:#x}", header[0])));
    }
    if header[3] != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[3])));
    }
    let (rows, cols) = (header[1] as usize, header[2] as usize);
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            input.read_exact(&mut word)?;
            m[(i, j)] = f64::from_le_bytes(word);
        }
    }
    Ok(m)
}

/// One row per matrix row, no header.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Columns `index, value`.
pub fn write_vector_csv<W: Write>(v: &DVector<f64>, mut out: W) -> Result<()> {
    writeln!(out, "index,value")?;
    for (i, x) in v.iter().enumerate() {
        writeln!(out, "{i},{}", fmt_f64(*x))?;
    }
    Ok(())
}
