//! Stage losses, datasets and the two training procedures.

mod config;
mod data;
mod loss;
mod train;

pub use config::TrainConfig;
pub use data::{crop_chw, stage1_samples, stage2_sample, stage2_samples, window_centers, Stage1Sample, Stage2Sample};
pub use loss::{
    loss_stage1, loss_stage2, stage1_loss, stage2_loss, FeatureExtractor, LossTerms, LossVars, RandomConvFeatures,
    BCE_CLAMP, FEATURE_SEED,
};
pub use train::{
    loss_history_csv, mean_total, predict_stage2, restore_all, train_stage1, train_stage1_with, train_stage2,
    train_stage2_with, LossRecord, TrainOutcome,
};
