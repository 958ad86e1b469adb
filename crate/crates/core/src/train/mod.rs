//! Objectives, optimization, averaging, metrics and the training loop.

pub mod count;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod swa;
pub mod trainer;

pub use count::param_count;
pub use metrics::{filter_oracle_uas, uas_las, Attachment, PunctPolicy};
pub use optim::{Adam, Schedule};
pub use swa::SwaState;
pub use trainer::{predict_corpus, select_best, train, EpochReport, TrainConfig, TrainOutcome};
