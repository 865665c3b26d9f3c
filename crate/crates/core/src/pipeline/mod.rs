//! Configuration, data files, training and evaluation loops, and post-hoc whitening.

pub mod ablate;
pub mod config;
pub mod data;
pub mod embfile;
pub mod train;
pub mod whiten;

pub use ablate::{ablate, AblationRow, Sweep};
pub use config::TrainConfig;
pub use data::{generate_synthetic, Dataset, PairSet, TrainingData};
pub use embfile::{read_embeddings, write_embeddings};
pub use train::{evaluate, train, EvalMetrics, EvalRecord, RunReport, TrainOutcome};
pub use whiten::{whiten_embeddings, whiten_file, PostWhitening};
