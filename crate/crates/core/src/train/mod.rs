//! Encoder construction, self-supervised pretraining, frozen-backbone linear
//! evaluation, label subsampling and the supervised baseline.

mod bank;
mod baseline;
mod checkpoint;
mod config;
mod encoder;
mod linear;
mod pretrain;
mod sweep;

pub use bank::ImageBank;
pub use baseline::{train_supervised_baseline, BaselineOutcome};
pub use checkpoint::{read_archive, sidecar_path, write_archive, ArtifactKind, CheckpointMeta, EncoderCheckpoint};
pub use config::{
    cosine_lr, Method, ModelConfig, Optimizer, Schedule, SslConfig, TargetInit, TrainConfig, DESK_BASE_WIDTH, DESK_BYOL_BATCH, DESK_BYOL_EPOCHS, DESK_PRETRAIN_EPOCHS, DESK_PRETRAIN_LR, DESK_TAU_BASE,
};
pub use encoder::{images_to_tensor, Encoder, EVAL_CHUNK};
pub use linear::{
    argmax, embed_augmented, embed_bank, fit_linear_head, head_accuracy, label_budget, softmax, softmax_cross_entropy, subsample_indices,
    subsample_labels, train_linear_head, EmbeddingSet, LinearEvalOutcome, LinearHead,
};
pub use pretrain::{estimate_activation_bytes, parameter_distance, pretrain, write_curve_csv, EpochRecord, PretrainOutcome};
pub use sweep::{
    baseline_sweep, probe_sweep, ProbeData, SweepCell, SweepSummary, SweepTable, REFERENCE_BASELINE_ONE_PERCENT, REFERENCE_SIMCLR_ONE_PERCENT,
};
