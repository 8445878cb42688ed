//! Subspace clusters and the attention-geometry toolkit built on them.

mod bounds;
mod construct;
mod ensemble;
mod fusion;
mod integrity;
mod record;
mod sharpness;

pub use bounds::{noise_bounds, FusionBound};
pub use construct::{affinity, check_pair_bounds, construct_thm1_weights, BoundCheck, Thm1Weights};
pub use ensemble::{
    check_rank_condition, cluster_sizes, generate_ensemble, perturb, sample_batch, ClusteredBatch,
    EnsembleMode, SubspaceEnsemble,
};
pub use fusion::{fusion_iterate, Activation, FusionOptions};
pub use integrity::{
    cluster_integrity, rho_brute, rho_greedy, rho_search, IntegrityResult, RhoEstimate, RhoSearch,
};
pub use record::{records_from_csv, records_to_csv, AffinityRecord};
pub use sharpness::{sharpness, ZERO_TOL};
