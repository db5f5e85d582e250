//! Joint multi-task objective, Adam with step-decayed learning rate, the
//! mini-batch loop and test-set metrics.

mod loss;
mod model;
mod optimizer;
mod trainer;

pub use loss::{
    energy_penalty, energy_penalty_outside, softmax_xent, total_loss, LossConfig, LossGradient,
    LossReport, OneHotLabel,
};
pub use model::{default_logit_scale, Inference, MultiTaskModel, TaskEncoding};
pub use optimizer::{adam_step, lr_schedule, AdamParams, AdamState};
pub use trainer::{
    evaluate, init_phases, train, train_from, EpochRecord, EvalMetrics, PhaseInit, TrainConfig,
    TrainOutcome,
};
