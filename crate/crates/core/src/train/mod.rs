//! Optimizers, the alternating generator/discriminator step and the training loop.

mod config;
mod optim;
mod run;
mod step;

pub use config::{preset_names, DataConfig, Precision, RunConfig, TrainConfig};
pub use optim::{adam_step, sgd_poly_step, OptimConfig, OptimKind, OptimState, Schedule};
pub use run::{
    evaluate, load_generator, prepare_data, train_loop, LoopOptions, LoopState, TrainSummary, BEST_FILE, CONFIG_FILE,
    HISTORY_FILE, HISTORY_HEADER, LAST_FILE, STATE_FILE, TIMING_FILE,
};
pub use step::{gan_step, gan_step_observed, GanState, Phase, StepReport};
