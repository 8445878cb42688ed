use serde::{Deserialize, Serialize};

use super::layers::FfnLayer;
use super::multihead::MultiHeadBlock;
use super::transfusion::{AttentionMode, TransFusionBlock};
use crate::error::{Error, Result};
use crate::geometry::AffinityRecord;
use crate::numerics::{finite_diff, max_relative_error, Matrix, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Ffn,
    Transfusion,
    Transformer,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ffn => "ffn",
            Self::Transfusion => "transfusion",
            Self::Transformer => "transformer",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffn" => Ok(Self::Ffn),
            "transfusion" => Ok(Self::Transfusion),
            "transformer" => Ok(Self::Transformer),
            other => Err(Error::Usage(format!("unknown head kind '{other}'"))),
        }
    }
}

/// Shape of a projection head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Input and output width.
    pub dim: usize,
    pub depth: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Hidden width of the FFN head, or of the feed-forward part of a
    /// Transformer block. Zero means `2 * dim`.
    #[serde(default)]
    pub hidden: usize,
    #[serde(default = "default_mode")]
    pub mode: AttentionMode,
    #[serde(default = "default_residual")]
    pub residual: bool,
}

fn default_heads() -> usize {
    1
}

fn default_mode() -> AttentionMode {
    AttentionMode::CodeListing
}

fn default_residual() -> bool {
    true
}

impl HeadConfig {
    pub fn new(kind: HeadKind, dim: usize, depth: usize) -> Self {
        Self {
            kind,
            dim,
            depth,
            heads: 1,
            hidden: 0,
            mode: AttentionMode::CodeListing,
            residual: true,
        }
    }

    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            2 * self.dim
        } else {
            self.hidden
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Ffn(FfnLayer),
    TransFusion(TransFusionBlock),
    MultiHead(MultiHeadBlock),
}

impl Block {
    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            Block::Ffn(b) => b.params(),
            Block::TransFusion(b) => b.params(),
            Block::MultiHead(b) => b.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Block::Ffn(b) => b.params_mut(),
            Block::TransFusion(b) => b.params_mut(),
            Block::MultiHead(b) => b.params_mut(),
        }
    }
}

/// Which attention matrices a forward pass reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecordPolicy {
    #[default]
    FirstHead,
    AllHeads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub config: HeadConfig,
    pub seed: u64,
    pub blocks: Vec<Block>,
}

pub fn init_head(config: &HeadConfig, rng: &mut Rng) -> Result<ProjectionHead> {
    let m = config.dim;
    if m == 0 {
        return Err(Error::Config("head width must be positive".into()));
    }
    let d = config.depth;
    let blocks = match config.kind {
        HeadKind::Ffn => {
            let f = config.hidden_width();
            (0..d)
                .map(|i| {
                    let input = if i == 0 { m } else { f };
                    let output = if i + 1 == d { m } else { f };
                    Block::Ffn(FfnLayer::init(input, output, i + 1 < d, rng))
                })
                .collect()
        }
        HeadKind::Transfusion => (0..d)
            .map(|_| {
                Block::TransFusion(TransFusionBlock::init(m, config.mode, config.residual, rng))
            })
            .collect(),
        HeadKind::Transformer => (0..d)
            .map(|_| {
                MultiHeadBlock::init(m, config.heads, config.hidden_width(), rng)
                    .map(Block::MultiHead)
            })
            .collect::<Result<_>>()?,
    };
    Ok(ProjectionHead {
        config: HeadConfig {
            hidden: config.hidden_width(),
            ..config.clone()
        },
        seed: rng.seed(),
        blocks,
    })
}

/// Output embeddings plus one attention matrix list per attention block.
pub(crate) struct TapeOutput<'t> {
    pub z: Var<'t>,
    pub attention: Vec<Vec<Var<'t>>>,
}

impl ProjectionHead {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.blocks.iter().flat_map(Block::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.blocks.iter_mut().flat_map(Block::params_mut).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward pass on `tape`; `ps` holds one node per matrix of [`Self::params`].
    pub(crate) fn forward_on<'t>(&self, ps: &[Var<'t>], x: Var<'t>) -> Result<TapeOutput<'t>> {
        if self.config.kind == HeadKind::Transfusion && self.blocks.is_empty() {
            return Ok(TapeOutput {
                z: x.row_l2_normalize()?,
                attention: Vec::new(),
            });
        }
        let mut z = x;
        let mut attention = Vec::new();
        let mut offset = 0;
        for block in &self.blocks {
            let count = block.params().len();
            let mine = &ps[offset..offset + count];
            offset += count;
            match block {
                Block::Ffn(b) => z = b.forward_on(mine, z)?,
                Block::TransFusion(b) => {
                    let (next, a) = b.forward_on(mine, z)?;
                    z = next;
                    attention.push(vec![a]);
                }
                Block::MultiHead(b) => {
                    let (next, a) = b.forward_on(mine, z)?;
                    z = next;
                    attention.push(a);
                }
            }
        }
        Ok(TapeOutput { z, attention })
    }
}

#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub z: Matrix,
    pub records: Vec<AffinityRecord>,
}

/// Runs the head on `x`. With `labels`, each record carries a sharpness value.
pub fn head_forward(
    head: &ProjectionHead,
    x: &Matrix,
    labels: Option<&[usize]>,
    policy: RecordPolicy,
) -> Result<HeadOutput> {
    if head.config.kind != HeadKind::Ffn && !head.blocks.is_empty() && x.rows() < 2 {
        return Err(Error::degenerate(
            "head_forward",
            "attention heads need at least 2 rows",
        ));
    }
    let tape = Tape::new();
    let ps: Vec<Var> = head
        .params()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let out = head.forward_on(&ps, tape.constant(x.clone()))?;
    let mut records = Vec::new();
    for (layer, heads) in out.attention.iter().enumerate() {
        let take = match policy {
            RecordPolicy::FirstHead => 1,
            RecordPolicy::AllHeads => heads.len(),
        };
        for (h, a) in heads.iter().take(take).enumerate() {
            let a = (*a.value()).clone();
            let mut rec = match labels {
                Some(l) => AffinityRecord::new(layer + 1, a, l.to_vec())?,
                None => AffinityRecord::unlabeled(layer + 1, a),
            };
            rec.head = h;
            records.push(rec);
        }
    }
    Ok(HeadOutput {
        z: (*out.z.value()).clone(),
        records,
    })
}

/// Largest relative gap, over all parameters, between the tape gradient of
/// `sum(Z * r)` and central differences with step `h`.
pub fn head_gradient_error(head: &ProjectionHead, x: &Matrix, r: &Matrix, h: f64) -> Result<f64> {
    let tape = Tape::new();
    let ps: Vec<Var> = head
        .params()
        .into_iter()
        .map(|p| tape.param(p.clone()))
        .collect();
    let out = head.forward_on(&ps, tape.constant(x.clone()))?;
    let loss = out.z.mul(tape.constant(r.clone()))?.sum();
    let grads = tape.grad(loss, &ps)?;
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        let numeric = finite_diff(
            |w| {
                let mut probe = head.clone();
                *probe.params_mut()[k] = w.clone();
                let z = head_forward(&probe, x, None, RecordPolicy::FirstHead)?.z;
                Ok(z.hadamard(r)?.sum())
            },
            head.params()[k],
            h,
        )?;
        worst = worst.max(max_relative_error(g, &numeric));
    }
    Ok(worst)
}
