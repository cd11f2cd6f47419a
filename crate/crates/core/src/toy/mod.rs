//! Desk-scale stand-in for pretrained-model fine-tuning: a synthetic
//! difficulty-tiered dataset and two toy classifiers that emit genuine
//! training dynamics.

pub mod dataset;
pub mod model;
pub mod train;

pub use dataset::{generate, generate_dataset, DatasetConfig, Geometry, Split, SyntheticDataset, Tier, TierMix};
pub use model::{ToyModel, ToyModelSpec};
pub use train::{run_reference, train, train_with_monitor, CheckpointMetrics, RunResult, TrainConfig};
