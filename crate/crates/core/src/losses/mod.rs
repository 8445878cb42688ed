//! Contrastive objectives over a batch of embeddings or an affinity matrix.

mod functions;
mod target;

pub use functions::{
    cosine_affinity_on, divergence_between, embedding_loss_on, g_normalize, g_normalize_on,
    jsd_loss, jsd_on, kl_softmax_loss, kl_softmax_on, loss_gradient_error, nt_xent, nt_xent_on,
    LossKind, LossValue, Mixture, DEFAULT_TAU,
};
pub use target::{build_target, view_groups, PairSource, TargetAffinity};
