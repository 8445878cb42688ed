use std::fmt::Write as _;

use super::sharpness::sharpness;
use crate::error::{Error, Result};
use crate::numerics::io::{format_g17, matrix_to_bytes};
use crate::numerics::Matrix;

/// Attention or affinity matrix of one layer with the cluster labels of its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityRecord {
    /// One-based layer index.
    pub layer: usize,
    /// Attention head within the layer; 0 for single-head blocks.
    pub head: usize,
    pub a: Matrix,
    pub labels: Vec<usize>,
    /// `f64::INFINITY` for an exactly block-diagonal matrix.
    pub sharpness: f64,
}

impl AffinityRecord {
    pub fn new(layer: usize, a: Matrix, labels: Vec<usize>) -> Result<Self> {
        if a.shape() != (labels.len(), labels.len()) {
            return Err(Error::shape(
                "AffinityRecord",
                a.shape(),
                (labels.len(), labels.len()),
            ));
        }
        let s = sharpness(&a, &labels)?;
        Ok(Self {
            layer,
            head: 0,
            a,
            labels,
            sharpness: s,
        })
    }

    /// Record without a sharpness value (labels unknown or single cluster).
    pub fn unlabeled(layer: usize, a: Matrix) -> Self {
        let n = a.rows();
        Self {
            layer,
            head: 0,
            a,
            labels: vec![0; n],
            sharpness: f64::NAN,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        matrix_to_bytes(&self.a)
    }
}

/// Long-format CSV with header `layer,i,j,value`.
pub fn records_to_csv(records: &[AffinityRecord]) -> String {
    let mut out = String::from("layer,i,j,value\n");
    for r in records {
        for i in 0..r.a.rows() {
            for j in 0..r.a.cols() {
                let _ = writeln!(out, "{},{i},{j},{}", r.layer, format_g17(r.a.get(i, j)));
            }
        }
    }
    out
}

/// Parses [`records_to_csv`] output back into one matrix per layer.
pub fn records_from_csv(text: &str) -> Result<Vec<(usize, Matrix)>> {
    let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Format {
            offset: lineno as u64,
            detail: format!("line {}: {detail}", lineno + 1),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
        let value = f[3].trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
        entries.push((int(f[0])?, int(f[1])?, int(f[2])?, value));
    }
    let mut layers: Vec<usize> = entries.iter().map(|e| e.0).collect();
    layers.sort_unstable();
    layers.dedup();
    layers
        .into_iter()
        .map(|l| {
            let mine: Vec<_> = entries.iter().filter(|e| e.0 == l).collect();
            let rows = mine.iter().map(|e| e.1).max().unwrap() + 1;
            let cols = mine.iter().map(|e| e.2).max().unwrap() + 1;
            let mut m = Matrix::zeros(rows, cols);
            for e in mine {
                m.set(e.1, e.2, e.3);
            }
            Ok((l, m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let a = Matrix::from_rows(&[[0.1, 1.0 / 3.0, 0.0], [2.0, -7e-12, 1.0], [0.5, 0.5, 0.5]])
            .unwrap();
        let r = AffinityRecord::new(2, a.clone(), vec![0, 0, 1]).unwrap();
        let text = records_to_csv(&[r]);
        assert!(text.starts_with("layer,i,j,value\n2,0,0,0.10000000000000001\n"));
        let back = records_from_csv(&text).unwrap();
        assert_eq!(back, vec![(2, a)]);
    }

    #[test]
    fn label_count_must_match() {
        assert!(AffinityRecord::new(1, Matrix::zeros(3, 3), vec![0, 1]).is_err());
    }
}
