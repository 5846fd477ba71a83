//! Stream pre-training and the two-stream bilinear quality model.

mod classifier;
mod config;
mod dbcnn;

pub use classifier::{accuracy, pretrain_stream, scnn_pretrain, train_classifier, ClassifierSample, EpochStats, TrainReport};
pub use config::{truncation_len, AuxStreamConfig, SCnnConfig, StreamConfig};
pub use dbcnn::{
    build_dbcnn, finetune, finetune_adam_default, quality_loss, quality_loss_grad, DbCnnCache, DbCnnConfig, DbCnnModel,
    FinetuneEpoch, FinetuneReport, ModelManifest, QualityLoss, QualitySample, MODEL_MANIFEST,
};
