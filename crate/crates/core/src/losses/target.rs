use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Where positive pairs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSource {
    /// Views of the same underlying sample.
    AugmentationPairs,
    ClassLabels,
}

/// Binary same-group indicator with zero diagonal, optionally row-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetAffinity {
    pub y: Matrix,
    pub row_normalized: bool,
    pub source: PairSource,
}

impl TargetAffinity {
    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.rows() == 0
    }

    /// Row-normalized copy; errors if some row has no positive.
    pub fn normalized(&self) -> Result<TargetAffinity> {
        if self.row_normalized {
            return Ok(self.clone());
        }
        let sums = self.y.row_sums();
        if let Some(i) = sums.iter().position(|&s| s == 0.0) {
            return Err(Error::degenerate(
                "build_target",
                format!("row {i} has no positive partner"),
            ));
        }
        Ok(TargetAffinity {
            y: Matrix::from_fn(self.len(), self.len(), |i, j| self.y.get(i, j) / sums[i]),
            row_normalized: true,
            source: self.source,
        })
    }
}

/// Group index per row for `samples` samples with two adjacent views each.
pub fn view_groups(samples: usize) -> Vec<usize> {
    (0..2 * samples).map(|i| i / 2).collect()
}

/// `Y_ij = 1` iff rows `i != j` share a group.
pub fn build_target(
    groups: &[usize],
    source: PairSource,
    normalize: bool,
) -> Result<TargetAffinity> {
    let n = groups.len();
    if n < 2 {
        return Err(Error::degenerate(
            "build_target",
            format!("need at least 2 rows, got {n}"),
        ));
    }
    let y = Matrix::from_fn(n, n, |i, j| {
        if i != j && groups[i] == groups[j] {
            1.0
        } else {
            0.0
        }
    });
    let t = TargetAffinity {
        y,
        row_normalized: false,
        source,
    };
    if normalize {
        t.normalized()
    } else {
        Ok(t)
    }
}
