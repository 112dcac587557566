//! Multi-label classification under label noise: synthetic data, noise
//! injection, small-loss selection, entropy-based label refurbishment and
//! the training loop that combines them.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod refurbish;
pub mod report;
pub mod selection;
pub mod trainers;

pub use dataset::{LabelMatrix, MultiLabelDataset};
pub use error::{Error, Result};
pub use noise::{NoiseLedger, NoiseStrategy};
pub use trainers::{train, RunReport, SplitData, TrainConfig, TrainerKind};
