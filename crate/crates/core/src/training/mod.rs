//! Losses, class weighting, optimizers, frame resampling and the two
//! training stages (FCN pre-training, then the recurrent head on a frozen
//! FCN).

mod loss;
mod optim;
mod plan;
mod sampling;
mod stage;

pub use loss::{median_frequency_weights, weighted_cross_entropy, ClassWeights};
pub use optim::{clip_global_norm, AdamConfig, Optimizer, OptimizerKind};
pub use plan::{
    read_loss_csv, without_wall_clock, write_loss_csv, LossRecord, LrPhase, Stage, TrainPlan, Weighting,
    LOSS_CSV_HEADER,
};
pub use sampling::block_sample_frames;
pub use stage::{precompute_logits, train_fcn, train_rnn, train_rnn_cached, Progress, TrainLog};

#[cfg(test)]
mod tests;
