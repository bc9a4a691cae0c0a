//! Training loop, optimizer, gradient verification and checkpoints.

pub mod alloc;
pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod step;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, run_gradcheck, GradCheckReport};
pub use model::{Graphs, Model};
pub use optim::Adam;
pub use step::{sample_batch, Batch, BatchSampler};
pub use trainer::{epoch_csv, fit, timing_csv, train_epoch, EpochLog, FitOutcome, TrainState};
