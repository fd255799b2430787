//! Datasets, training and evaluation for the spectrogram transfer-learning
//! pipeline: beat images for pretraining, patient-grouped cohort images for
//! fine-tuning, and patient-level k-fold cross-validation.

pub mod checkpoint;
pub mod crossval;
pub mod dataset;
pub mod folds;
pub mod pipeline;
pub mod train;

pub use checkpoint::{Checkpoint, TrainMeta};
pub use crossval::{crossval, CrossvalReport, CrossvalSettings};
pub use dataset::ImageSet;
pub use folds::{make_folds, FoldPlan};
pub use pipeline::Preprocess;
pub use train::{
    finetune, pretrain, Aggregation, ClassWeighting, FreezePolicy, Init, LogRecord, RunInfo, TrainConfig,
    TrainError,
};
