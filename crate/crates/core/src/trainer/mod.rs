//! Optimization protocol: class-weighted BCE with smoothing, MixUp/CutMix,
//! AdamW under warmup + cosine, gradient clipping and accumulation, EMA
//! weights and early stopping on validation macro AUC.

mod config;
mod loss;
mod mix;
mod optim;
mod train;

pub use config::{RunConfig, ADAM_BETAS, ADAM_EPS, HIGH_GRID, LOW_GRID, MIN_LR};
pub use loss::{class_weights, smooth_targets};
pub use mix::{cutmix_box, cutmix_with, mix_batch, mixup_with, MixConfig, MixMode};
pub use optim::{clip_global_norm, ema_update, global_norm, AdamW, Schedule};
pub use train::{
    accumulate_grads, evaluate_split, history_csv, loss_and_grads, run_header, score_split, train, EarlyStopping,
    EpochRecord, TrainOutcome, EVAL_BATCH, HISTORY_HEADER,
};
