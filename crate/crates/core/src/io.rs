//! Matrix file formats.
//!
//! * CSV: headerless, one matrix row per record, `.` as decimal separator.
//! * LSCMF1 binary: the 7 magic bytes `LSCMF1\0`, one zero pad byte, the row
//!   and column counts as little-endian `u64`, then the entries in row-major
//!   order as little-endian IEEE-754 `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"LSCMF1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    #[default]
    Csv,
    Bin,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Bin => "bin",
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "bin" => Ok(MatrixFormat::Bin),
            other => Err(Error::Format(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<Mat<f64>> {
    let file = File::open(path)?;
    match format {
        MatrixFormat::Csv => read_csv(BufReader::new(file)),
        MatrixFormat::Bin => read_bin(BufReader::new(file)),
    }
}

pub fn write_matrix(path: &Path, matrix: MatRef<'_, f64>, format: MatrixFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        MatrixFormat::Csv => write_csv(&mut out, matrix)?,
        MatrixFormat::Bin => write_bin(&mut out, matrix)?,
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Mat<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        if n_cols.is_none() {
            n_cols = Some(record.len());
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("row {}, column {}: `{field}` is not a number", n_rows + 1, j + 1))
            })?;
            values.push(v);
        }
        n_rows += 1;
    }
    let n_cols = n_cols.unwrap_or(0);
    Ok(Mat::from_fn(n_rows, n_cols, |i, j| values[i * n_cols + j]))
}

pub fn write_csv<W: Write>(writer: W, matrix: MatRef<'_, f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let mut record = Vec::with_capacity(matrix.ncols());
    for i in 0..matrix.nrows() {
        record.clear();
        // `{:?}` prints the shortest representation that round-trips
        record.extend((0..matrix.ncols()).map(|j| format!("{:?}", matrix[(i, j)])));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_bin<R: Read>(mut reader: R) -> Result<Mat<f64>> {
    let mut header = [0u8; 24];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated LSCMF1 header".into()))?;
    if &header[..7] != MAGIC {
        return Err(Error::Format("missing LSCMF1 magic bytes".into()));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    let rows = usize::try_from(rows).map_err(|_| Error::Format("row count too large".into()))?;
    let cols = usize::try_from(cols).map_err(|_| Error::Format("column count too large".into()))?;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("matrix too large".into()))?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() != len {
        return Err(Error::Format(format!(
            "expected {len} bytes of data for a {rows}x{cols} matrix, found {}",
            body.len()
        )));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| {
        let at = 8 * (i * cols + j);
        f64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes"))
    }))
}

pub fn write_bin<W: Write>(mut writer: W, matrix: MatRef<'_, f64>) -> Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_all(&[0u8])?;
    writer.write_all(&(matrix.nrows() as u64).to_le_bytes())?;
    writer.write_all(&(matrix.ncols() as u64).to_le_bytes())?;
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            writer.write_all(&matrix[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_layout_is_bit_exact() {
        let m = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 0.5);
        let mut buf = Vec::new();
        write_bin(&mut buf, m.as_ref()).unwrap();
        assert_eq!(&buf[..8], b"LSCMF1\0\0");
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        // row-major: second value is (0, 1)
        assert_eq!(&buf[32..40], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 24 + 6 * 8);
    }

    #[test]
    fn malformed_binary_is_rejected() {
        assert!(read_bin(&b"NOTMAGIC"[..]).is_err());
        let mut buf = Vec::new();
        write_bin(&mut buf, Mat::<f64>::zeros(2, 2).as_ref()).unwrap();
        buf.pop();
        assert!(matches!(read_bin(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_rejects_ragged_and_non_numeric_rows() {
        assert!(read_csv(&b"1,2\n3\n"[..]).is_err());
        assert!(matches!(read_csv(&b"1,x\n"[..]), Err(Error::Format(_))));
        let m = read_csv(&b"1.5,-2e-3\n0,4\n"[..]).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (2, 2));
        assert_eq!(m[(0, 1)], -2e-3);
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(rows in 1usize..6, cols in 1usize..6, seed in proptest::collection::vec(-1e6f64..1e6, 36)) {
            let m = Mat::from_fn(rows, cols, |i, j| seed[i * 6 + j] / 7.0);
            let mut bin = Vec::new();
            write_bin(&mut bin, m.as_ref()).unwrap();
            let mut csv = Vec::new();
            write_csv(&mut csv, m.as_ref()).unwrap();
            for back in [read_bin(&bin[..]).unwrap(), read_csv(&csv[..]).unwrap()] {
                prop_assert_eq!((back.nrows(), back.ncols()), (rows, cols));
                for i in 0..rows {
                    for j in 0..cols {
                        prop_assert_eq!(back[(i, j)].to_bits(), m[(i, j)].to_bits());
                    }
                }
            }
        }
    }
}
