use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Entries with magnitude at most this fraction of `max |A|` count as zero.
pub const ZERO_TOL: f64 = 1e-12;

/// Smallest same-cluster affinity (off the diagonal) divided by the largest
/// cross-cluster affinity.
///
/// Returns `f64::INFINITY` when every cross-cluster entry is non-positive (or
/// numerically zero) while the numerator is positive, and `0.0` when the
/// numerator is not positive.
pub fn sharpness(a: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if a.shape() != (n, n) {
        return Err(Error::shape("sharpness", a.shape(), (n, n)));
    }
    let mut within = f64::INFINITY;
    let mut across = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = a.get(i, j);
            if labels[i] == labels[j] {
                within = within.min(v);
            } else {
                across = across.max(v);
            }
        }
    }
    if within == f64::INFINITY {
        return Err(Error::degenerate("sharpness", "no same-cluster pair"));
    }
    if across == f64::NEG_INFINITY {
        return Err(Error::degenerate("sharpness", "no cross-cluster pair"));
    }
    let zero = ZERO_TOL * a.max_abs();
    if within <= zero {
        return Ok(0.0);
    }
    if across <= zero {
        return Ok(f64::INFINITY);
    }
    Ok(within / across)
}
