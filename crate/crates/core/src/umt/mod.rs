//! Unsupervised training: denoising autoencoding plus on-the-fly
//! back-translation over a shared-encoder / dual-decoder model.

pub mod noise;
pub mod schedule;
pub mod steps;
pub mod trainer;

pub use noise::{add_noise, NoiseConfig};
pub use schedule::{Task, TaskMix, TrainingSchedule};
pub use steps::{
    backtranslation_step, backtranslation_step_with, batch_gradients, dae_step, supervised_step,
    BtOutcome, StepContext,
};
pub use trainer::{
    load_model, read_metrics, restore_model, train, StepRecord, TrainSummary, Trainer,
};
