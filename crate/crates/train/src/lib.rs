//! Training, evaluation and sampling for U-KAN: configuration, Adam with a
//! per-epoch cosine schedule, the binary checkpoint format and the run loop
//! behind the `ukan` command.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod optim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{AugmentMode, Task, TrainConfig};
pub use error::{Result, TrainError};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use trainer::{evaluate, generate, sample_name, train, train_on, RunOptions, RunSummary, Trainer};
