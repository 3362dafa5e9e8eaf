//! Semi-supervised segmentation training: toy students and discriminators,
//! every loss term, the synthetic shapes dataset, and the training loop for
//! supervised, mean-teacher, dual-student and adversarial dual-student modes.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rngstate;
pub mod run;
pub mod trainer;

pub use config::{Mode, TrainConfig};
pub use data::{generate_shapes, split_semi, DataSpec, SegDataset, SegSample};
pub use error::{Result, TrainError};
pub use losses::{LossConfig, LossTerms};
pub use metrics::ConfusionMatrix;
pub use models::{Discriminator, Parameterized, StudentNet};
pub use trainer::{EvalReport, LossRecord, Trainer};
