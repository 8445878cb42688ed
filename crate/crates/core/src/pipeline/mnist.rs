//! Reader for the big-endian IDX files that ship MNIST.

use std::path::Path;

use super::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                detail: format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, want: u32) -> Result<()> {
        let got = self.u32("magic")?;
        if got != want {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {got:#010x}, expected {want:#010x}"),
            });
        }
        Ok(())
    }
}

/// Images as rows scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<Matrix> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let keep = limit.map_or(count, |l| l.min(count));
    let pixels = r.take(count * rows * cols, "pixel data")?;
    let width = rows * cols;
    Matrix::new(
        keep,
        width,
        pixels[..keep * width]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect(),
    )
}

pub fn parse_idx_labels(bytes: &[u8], limit: Option<usize>) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let keep = limit.map_or(count, |l| l.min(count));
    Ok(r.take(count, "labels")?[..keep]
        .iter()
        .map(|&l| l as usize)
        .collect())
}

pub fn load_mnist(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let x = parse_idx_images(&std::fs::read(images)?, limit)?;
    let y = parse_idx_labels(&std::fs::read(labels)?, limit)?;
    if x.rows() != y.len() {
        return Err(Error::Format {
            offset: 4,
            detail: format!("{} images but {} labels", x.rows(), y.len()),
        });
    }
    Dataset::new(x, y, split)
}

/// Encodes images (values in [0, 1]) as an IDX image file.
pub fn encode_idx_images(images: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if images.cols() != rows * cols {
        return Err(Error::shape(
            "encode_idx_images",
            images.shape(),
            (images.rows(), rows * cols),
        ));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGE_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend(v.to_be_bytes());
    }
    out.extend(
        images
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}
