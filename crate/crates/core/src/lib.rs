//! Contrastive-learning projection heads (feed-forward, TransFusion and
//! multi-head Transformer), their losses, and a numerical workbench for the
//! subspace-cluster theory of attention fusion.

pub mod error;
pub mod export;
pub mod geometry;
pub mod heads;
pub mod losses;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng, Tape, Var};
