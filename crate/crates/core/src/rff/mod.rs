//! Neural synchronization fingerprint extractor: learned offset estimation
//! and compensation, the fingerprint BCNN, classifier heads and training.

mod checkpoint;
mod model;
mod ops;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MODEL_BIN, MODEL_JSON,
};
pub use model::{
    init_classifier, ts_pipeline_extract, BatchOutput, Fingerprint, ForwardTape, ModelConfig,
    Pipeline, Prepared, RffModel,
};
pub use ops::{
    cross_entropy, freq_compensate, freq_compensate_backward, head_backward, head_forward,
    hypersphere_prob, hypersphere_project, naive_softmax_prob, phase_compensate,
    phase_compensate_backward, softmax, Head, HeadTape,
};
pub use train::{
    mi_lower_bound, train, train_with_trace, ClassMap, EpochStats, TrainConfig, TrainTrace,
    Trained, Trainer,
};
