//! Matrix persistence: the `FLAB` little-endian binary container and CSV.
//!
//! Binary layout per matrix: magic `FLAB`, `u32` rows, `u32` cols, then
//! `rows * cols` `f64` values, all little-endian. Several matrices may be
//! concatenated in one stream.

use std::io::{Read, Write};

use super::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLAB";

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Usage("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Usage("too many columns".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * m.len());
    write_matrix(&mut out, m).expect("writing to a Vec cannot fail");
    out
}

/// Reads matrices back to back until the input is exhausted.
pub fn read_matrices(bytes: &[u8]) -> Result<Vec<Matrix>> {
    let mut cursor = 0usize;
    let mut out = Vec::new();
    while cursor < bytes.len() {
        let (m, used) = read_one(&bytes[cursor..], cursor as u64)?;
        out.push(m);
        cursor += used;
    }
    Ok(out)
}

pub fn read_matrix(bytes: &[u8]) -> Result<Matrix> {
    let (m, used) = read_one(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used as u64,
            detail: format!("{} trailing bytes after matrix", bytes.len() - used),
        });
    }
    Ok(m)
}

pub fn read_matrix_from<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    read_matrix(&bytes)
}

fn read_one(bytes: &[u8], base: u64) -> Result<(Matrix, usize)> {
    let truncated = |at: usize, what: &str| Error::Format {
        offset: base + at as u64,
        detail: format!("truncated {what}"),
    };
    if bytes.len() < 12 {
        return Err(truncated(bytes.len(), "header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format {
            offset: base,
            detail: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let need = 12 + 8 * rows * cols;
    if bytes.len() < need {
        return Err(truncated(bytes.len(), "payload"));
    }
    let data = bytes[12..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Matrix::new(rows, cols, data)?, need))
}

/// Formats like C's `%.17g`, which round-trips every finite `f64`.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Plain CSV, one matrix row per line, `%.17g` values, no header.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&v| format_g17(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Format {
                    offset: lineno as u64,
                    detail: format!("line {}: {e}", lineno + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}
