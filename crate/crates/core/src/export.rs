//! Attention heatmaps as ASCII PGM plus raw CSV, one pair per layer.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::AffinityRecord;
use crate::numerics::io::matrix_to_csv;
use crate::numerics::Matrix;

pub const PGM_MAXVAL: u32 = 255;

/// Linear min-max scaling to 0..=255; a constant matrix maps to all zeros.
pub fn to_gray(a: &Matrix) -> Vec<u8> {
    let lo = a.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    a.data()
        .iter()
        .map(|&v| {
            if span > 0.0 && span.is_finite() {
                ((v - lo) / span * PGM_MAXVAL as f64).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Plain (P2) PGM text, one image row per line.
pub fn pgm_encode(a: &Matrix) -> String {
    let gray = to_gray(a);
    let mut out = format!("P2\n{} {}\n{}\n", a.cols(), a.rows(), PGM_MAXVAL);
    for row in gray.chunks(a.cols().max(1)) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Parses P2 text into `(width, height, maxval, pixels)`.
pub fn pgm_decode(text: &str) -> Result<(usize, usize, u32, Vec<u32>)> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let bad = |detail: &str| Error::Format {
        offset: 0,
        detail: detail.to_string(),
    };
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num = |what: &str| -> Result<u32> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad or missing {what}")))
    };
    let w = num("width")? as usize;
    let h = num("height")? as usize;
    let maxval = num("maxval")?;
    let pixels = (0..w * h)
        .map(|_| num("pixel"))
        .collect::<Result<Vec<u32>>>()?;
    if pixels.iter().any(|&p| p > maxval) {
        return Err(bad("pixel above maxval"));
    }
    Ok((w, h, maxval, pixels))
}

/// Writes `layer_<l>.pgm` and `layer_<l>.csv` for the first head of each
/// layer and returns the written paths.
pub fn export_attention(records: &[AffinityRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Usage("no attention records to export".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut layers: Vec<usize> = records.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    for layer in layers {
        let rec = records
            .iter()
            .filter(|r| r.layer == layer)
            .min_by_key(|r| r.head)
            .expect("layer present");
        for (ext, body) in [("pgm", pgm_encode(&rec.a)), ("csv", matrix_to_csv(&rec.a))] {
            let path = dir.join(format!("layer_{layer}.{ext}"));
            std::fs::write(&path, body).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", path.display()),
                ))
            })?;
            written.push(path);
        }
    }
    Ok(written)
}
