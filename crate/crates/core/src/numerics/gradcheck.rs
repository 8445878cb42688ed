use super::Matrix;
use crate::error::{Error, Result};

/// Central-difference gradient estimate of a scalar function of a matrix.
pub fn finite_diff<F>(mut loss_fn: F, at: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Usage(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    let mut probe = at.clone();
    let mut out = Matrix::zeros(at.rows(), at.cols());
    for index in 0..at.len() {
        let orig = probe.data()[index];
        probe.data_mut()[index] = orig + h;
        let plus = loss_fn(&probe)?;
        probe.data_mut()[index] = orig - h;
        let minus = loss_fn(&probe)?;
        probe.data_mut()[index] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff",
                index,
            });
        }
        out.data_mut()[index] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Largest entrywise `|a - b| / max(|a|, |b|)`, with the denominator floored
/// at `1e-6` so entries that are zero in both do not blow up.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let at = Matrix::from_rows(&[[0.3, -1.2], [4.0, 2.5]]).unwrap();
        let g = finite_diff(|m| Ok(m.sum()), &at, 1e-5).unwrap();
        assert!(g.max_abs_diff(&Matrix::filled(2, 2, 1.0)).unwrap() < 1e-10);
    }

    #[test]
    fn square_at_three() {
        let g = finite_diff(|m| Ok(m.data()[0].powi(2)), &Matrix::scalar(3.0), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_reports_entry() {
        let at = Matrix::from_rows(&[[1.0, 1e-6]]).unwrap();
        let err = finite_diff(|m| Ok(m.data()[1].ln() + m.data()[0]), &at, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff(|m| Ok(m.sum()), &Matrix::scalar(1.0), 0.0).is_err());
    }
}
