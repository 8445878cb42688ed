use super::layers::{init_uniform, layer_norm, FfnLayer};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    /// m x d_k each.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Pre-norm Transformer block: layer norm, multi-head softmax attention,
/// residual, layer norm, two-layer GeLU feed-forward, residual.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadBlock {
    pub heads: Vec<AttentionHead>,
    /// (h d_k) x m.
    pub w_o: Matrix,
    pub ffn_in: FfnLayer,
    pub ffn_out: FfnLayer,
    pub ln1_scale: Matrix,
    pub ln1_shift: Matrix,
    pub ln2_scale: Matrix,
    pub ln2_shift: Matrix,
}

impl MultiHeadBlock {
    pub fn init(m: usize, heads: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || m % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide width {m}"
            )));
        }
        let dk = m / heads;
        let heads = (0..heads)
            .map(|_| AttentionHead {
                w_q: init_uniform(m, dk, m, rng),
                w_k: init_uniform(m, dk, m, rng),
                w_v: init_uniform(m, dk, m, rng),
            })
            .collect();
        Ok(Self {
            heads,
            w_o: init_uniform(m, m, m, rng),
            ffn_in: FfnLayer::init(m, hidden, true, rng),
            ffn_out: FfnLayer::init(hidden, m, false, rng),
            ln1_scale: Matrix::filled(1, m, 1.0),
            ln1_shift: Matrix::zeros(1, m),
            ln2_scale: Matrix::filled(1, m, 1.0),
            ln2_shift: Matrix::zeros(1, m),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_o.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].w_q.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.extend([&h.w_q, &h.w_k, &h.w_v]);
        }
        out.push(&self.w_o);
        out.extend(self.ffn_in.params());
        out.extend(self.ffn_out.params());
        out.extend([
            &self.ln1_scale,
            &self.ln1_shift,
            &self.ln2_scale,
            &self.ln2_shift,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for h in &mut self.heads {
            out.extend([&mut h.w_q, &mut h.w_k, &mut h.w_v]);
        }
        out.push(&mut self.w_o);
        out.extend(self.ffn_in.params_mut());
        out.extend(self.ffn_out.params_mut());
        out.extend([
            &mut self.ln1_scale,
            &mut self.ln1_shift,
            &mut self.ln2_scale,
            &mut self.ln2_shift,
        ]);
        out
    }

    pub(crate) fn forward_on<'t>(
        &self,
        ps: &[Var<'t>],
        x: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let h = self.heads.len();
        let base = 3 * h;
        let w_o = ps[base];
        let (ffn_in, ffn_out) = (&ps[base + 1..base + 3], &ps[base + 3..base + 5]);
        let ln = &ps[base + 5..base + 9];
        let scale = 1.0 / (self.head_dim() as f64).sqrt();

        let normed = layer_norm(x, ln[0], ln[1])?;
        let mut outputs = Vec::with_capacity(h);
        let mut attention = Vec::with_capacity(h);
        for i in 0..h {
            let q = normed.matmul(ps[3 * i])?;
            let k = normed.matmul(ps[3 * i + 1])?;
            let v = normed.matmul(ps[3 * i + 2])?;
            let p = q.matmul(k.t())?.scale(scale).row_softmax()?;
            outputs.push(p.matmul(v)?);
            attention.push(p);
        }
        let x1 = x.add(Var::concat_cols(&outputs)?.matmul(w_o)?)?;
        let hidden = self
            .ffn_in
            .forward_on(ffn_in, layer_norm(x1, ln[2], ln[3])?)?;
        let x2 = x1.add(self.ffn_out.forward_on(ffn_out, hidden)?)?;
        Ok((x2, attention))
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let tape = Tape::new();
        let ps: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let (out, att) = self.forward_on(&ps, tape.constant(x.clone()))?;
        Ok((
            (*out.value()).clone(),
            att.iter().map(|a| (*a.value()).clone()).collect(),
        ))
    }
}
