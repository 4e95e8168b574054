//! Label-smoothed training with Adam, dev selection and checkpoint averaging.

mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{average_checkpoint_files, average_checkpoints, average_params, Checkpoint};
pub use loss::{smoothed_loss, smoothed_loss_terms, smoothed_target_entropy};
pub use optim::{Adam, LrSchedule};
pub use trainer::{
    length_buckets, teacher_forced_errors, token_error, train, MetricsRecord, SpeakerResources, TrainConfig, TrainOutcome,
};
