//! Projection heads: feed-forward, ReLU-attention fusion blocks, and pre-norm
//! Transformer blocks.

mod checkpoint;
mod head;
mod layers;
mod multihead;
mod transfusion;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use head::{
    head_forward, head_gradient_error, init_head, Block, HeadConfig, HeadKind, HeadOutput,
    ProjectionHead, RecordPolicy,
};
pub use layers::{FfnLayer, LAYER_NORM_EPS};
pub use multihead::{AttentionHead, MultiHeadBlock};
pub use transfusion::{AttentionMode, TransFusionBlock};
