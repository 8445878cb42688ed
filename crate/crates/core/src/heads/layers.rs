use crate::error::Result;
use crate::numerics::{Matrix, Rng, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `uniform(-sqrt(1/fan_in), sqrt(1/fan_in))` entries.
pub(crate) fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    rng.uniform_matrix(rows, cols, -bound, bound)
}

/// Dense layer `x W + b` with optional GeLU.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnLayer {
    /// in x out.
    pub w: Matrix,
    /// 1 x out.
    pub b: Matrix,
    pub gelu: bool,
}

impl FfnLayer {
    pub fn init(input: usize, output: usize, gelu: bool, rng: &mut Rng) -> Self {
        Self {
            w: init_uniform(input, output, input, rng),
            b: init_uniform(1, output, input, rng),
            gelu,
        }
    }

    pub fn zeros(input: usize, output: usize, gelu: bool) -> Self {
        Self {
            w: Matrix::zeros(input, output),
            b: Matrix::zeros(1, output),
            gelu,
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w, &mut self.b]
    }

    pub(crate) fn forward_on<'t>(&self, ps: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(ps[0])?.add_row(ps[1])?;
        Ok(if self.gelu { y.gelu() } else { y })
    }
}

/// Per-row layer normalization with a learned scale and shift (both 1 x d).
pub(crate) fn layer_norm<'t>(x: Var<'t>, scale: Var<'t>, shift: Var<'t>) -> Result<Var<'t>> {
    let d = x.shape().1 as f64;
    let centered = x.sub_col(x.row_sum().scale(1.0 / d))?;
    let sd = centered
        .square()
        .row_sum()
        .scale(1.0 / d)
        .add_scalar(LAYER_NORM_EPS)
        .sqrt()?;
    centered.div_col(sd)?.mul_row(scale)?.add_row(shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let tape = Tape::new();
        let mut rng = Rng::new(5);
        let x = tape.constant(rng.normal_matrix(4, 6));
        let y = layer_norm(
            x,
            tape.constant(Matrix::filled(1, 6, 1.0)),
            tape.constant(Matrix::zeros(1, 6)),
        )
        .unwrap()
        .value();
        for i in 0..4 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 6.0;
            let var: f64 = y.row(i).iter().map(|v| v * v).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn uniform_init_moments() {
        let mut rng = Rng::new(9);
        let m = init_uniform(100, 100, 25, &mut rng);
        let b = 0.2f64;
        let mean = m.sum() / 1e4;
        let var = m.data().iter().map(|v| v * v).sum::<f64>() / 1e4;
        assert!(m.max_abs() <= b);
        assert!(mean.abs() < 0.05 * b);
        assert!((var - b * b / 3.0).abs() < 0.05 * b * b / 3.0);
    }
}
