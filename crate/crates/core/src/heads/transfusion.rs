use super::layers::init_uniform;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Tape, Var, LOG_FLOOR};

/// Which formulation of the ReLU attention block to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// `A = (XW_Q)(XW_K)ᵀ`, `X' = ReLU(A) X W_V + X` on row-normalized `X`.
    Equation,
    /// Cosine query/key affinities, ReLU, zero diagonal, `+1e-10`, row
    /// normalization, then the value update.
    CodeListing,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equation" => Ok(Self::Equation),
            "code-listing" => Ok(Self::CodeListing),
            other => Err(Error::Usage(format!("unknown attention mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransFusionBlock {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub mode: AttentionMode,
    pub residual: bool,
}

impl TransFusionBlock {
    pub fn new(
        w_q: Matrix,
        w_k: Matrix,
        w_v: Matrix,
        mode: AttentionMode,
        residual: bool,
    ) -> Result<Self> {
        let m = w_q.rows();
        for w in [&w_q, &w_k, &w_v] {
            if w.shape() != (m, m) {
                return Err(Error::shape("TransFusionBlock", w.shape(), (m, m)));
            }
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            mode,
            residual,
        })
    }

    pub fn init(m: usize, mode: AttentionMode, residual: bool, rng: &mut Rng) -> Self {
        Self {
            w_q: init_uniform(m, m, m, rng),
            w_k: init_uniform(m, m, m, rng),
            w_v: init_uniform(m, m, m, rng),
            mode,
            residual,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.w_q, &self.w_k, &self.w_v]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v]
    }

    /// Returns the block output and its attention: `A` before the ReLU in
    /// equation mode, the normalized weights in code-listing mode.
    pub(crate) fn forward_on<'t>(&self, ps: &[Var<'t>], x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (w_q, w_k, w_v) = (ps[0], ps[1], ps[2]);
        let x = x.row_l2_normalize()?;
        let q = x.matmul(w_q)?;
        let k = x.matmul(w_k)?;
        let v = x.matmul(w_v)?;
        let (weights, attention) = match self.mode {
            AttentionMode::Equation => {
                let a = q.matmul(k.t())?;
                (a.relu(), a)
            }
            AttentionMode::CodeListing => {
                if x.shape().0 < 2 {
                    return Err(Error::degenerate(
                        "transfusion_forward",
                        "code-listing attention needs at least 2 rows",
                    ));
                }
                let a = q
                    .row_l2_normalize()?
                    .matmul(k.row_l2_normalize()?.t())?
                    .relu()
                    .zero_diag()
                    .add_scalar(LOG_FLOOR)
                    .row_normalize()?;
                (a, a)
            }
        };
        let mut out = weights.matmul(v)?;
        if self.residual {
            out = out.add(x)?;
        }
        Ok((out, attention))
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let tape = Tape::new();
        let ps: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let (out, a) = self.forward_on(&ps, tape.constant(x.clone()))?;
        Ok(((*out.value()).clone(), (*a.value()).clone()))
    }
}
