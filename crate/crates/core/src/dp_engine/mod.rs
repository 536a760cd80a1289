//! Per-example clipping, noising, and accumulation; the SGD update; the
//! training loop that ties them together.

mod accumulate;
mod clip;
mod config;
mod gradient;
mod noise;
mod optim;
mod train;

pub use accumulate::{accumulate, Accumulator};
pub use clip::{clip_global, clip_per_layer, clip_per_stage};
pub use config::{stage_partition, ClipMode, DpConfig, NoisePlacement};
pub use gradient::{check_tiling, l2_norm, uniform_extents, Extent, FlatGradient};
pub use noise::{gaussian_vector, noise_per_example, noise_rng, BATCH_SLOT};
pub use optim::{lr_schedule, sgd_step, LrSchedule, OptimizerState};
pub use train::{evaluate_accuracy, train_on_batch, EpochOutcome, TrainSettings, Trainer};
