use super::construct::affinity;
use super::ensemble::ClusteredBatch;
use super::record::AffinityRecord;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// How affinities become attention weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Elementwise `max(A, 0)`, as in a TransFusion block.
    Relu,
    /// Elementwise `exp(A)`: softmax attention without the row normalization.
    Exp,
}

#[derive(Clone, Debug)]
pub struct FusionOptions {
    pub layers: usize,
    pub activation: Activation,
    /// Add the block input back after the attention update.
    pub residual: bool,
    /// Value projection; identity when `None`.
    pub w_v: Option<Matrix>,
}

impl FusionOptions {
    pub fn residual_free(layers: usize) -> Self {
        Self {
            layers,
            activation: Activation::Relu,
            residual: false,
            w_v: None,
        }
    }
}

/// Runs `layers` TransFusion blocks with fixed query/key weights `w`:
/// normalize rows, `A = (XW)(XW)ᵀ`, `X' = f(A) X W_V (+ X)` with `f` the
/// chosen activation.
pub fn fusion_iterate(
    batch: &ClusteredBatch,
    w: &Matrix,
    opts: &FusionOptions,
) -> Result<Vec<AffinityRecord>> {
    if opts.layers == 0 {
        return Err(Error::Config("fusion needs at least one layer".into()));
    }
    let mut x = batch.x.clone();
    let mut records = Vec::with_capacity(opts.layers);
    for layer in 1..=opts.layers {
        x = x.row_l2_normalize()?;
        let a = affinity(&x, w)?;
        let values = match &opts.w_v {
            Some(wv) => x.matmul(wv)?,
            None => x.clone(),
        };
        let weights = match opts.activation {
            Activation::Relu => a.map(|v| v.max(0.0)),
            Activation::Exp => a.map(f64::exp),
        };
        let mut next = weights.matmul(&values)?;
        if opts.residual {
            next.add_assign(&x)?;
        }
        records.push(AffinityRecord::new(layer, a, batch.labels.clone())?);
        x = next;
    }
    Ok(records)
}
