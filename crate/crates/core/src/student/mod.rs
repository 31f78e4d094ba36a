//! The student: a point-feature adapter distilled from teacher consensus
//! embeddings, and direct inference with it.

pub mod adapter;
pub mod loss;
pub mod train;

pub use adapter::{adapter_forward, Activation, AdapterGrads, AdapterParams, OptimizerState};
pub use loss::{ce_loss, contrastive_loss, total_grad, total_loss, LossGrad};
pub use train::{
    adam_step, batch_loss, infer, infer_pooled, train, train_from, DistillBatch, DistillConfig,
    Inference, LogEntry, TrainOutcome,
};
