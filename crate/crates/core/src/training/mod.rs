//! The optimization loop: alternating generator and discriminator Adam
//! steps, the fake-image replay buffer, the learning-rate schedule and
//! bit-exact checkpoints.

mod adam;
mod buffer;
mod checkpoint;
mod config;
mod run;
mod state;

pub use adam::Adam;
pub use buffer::{BufferDecision, ImageBuffer};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, state_from_bytes, MAGIC, VERSION};
pub use config::{lr_at, TrainingConfig};
pub use run::{
    checkpoint_path, log_line, next_batch, read_log, train, train_state, TrainOutcome, CHECKPOINT_DIR, CONFIG_FILE,
    LOG_COLUMNS, LOG_FILE,
};
pub use state::{Direction, GeneratorPhase, TrainState};
