//! End-to-end contrastive training: data, encoder, optimizer, metrics.

mod config;
mod data;
mod encoder;
mod metrics;
mod mnist;
mod optim;
mod train;

pub use config::{DataConfig, EncoderConfig, LossConfig, OptimizerConfig, RunConfig, Schedule};
pub use data::{augment, synthetic_split, Dataset, Split};
pub use encoder::{encode, Encoder};
pub use metrics::{
    block_alignment, loss_log_csv, metrics_csv, nearest_neighbor_accuracy, to_row_stochastic,
    EpochMetrics, LinearProbe, LossLogEntry, MetricsReport,
};
pub use mnist::{
    encode_idx_images, encode_idx_labels, load_mnist, parse_idx_images, parse_idx_labels,
};
pub use optim::{cosine_rate, learning_rate, Sgd};
pub use train::{evaluate, load_data, probe_batch, train, Divergence, TrainOutcome};
