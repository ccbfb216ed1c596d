//! The segmentation network: configuration, assembly, audit, training and checkpoints.

pub mod audit;
pub mod checkpoint;
pub mod config;
pub mod network;
pub mod train;

pub use audit::{parameter_count, shape_audit, ShapeAuditReport};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{BnReluOrder, ModelConfig, Strategy};
pub use network::{assemble_model, CrossFusion, ModelGraph};
pub use train::{
    encode_targets, eval_loss, evaluate_dataset, predict_masks, train_epoch, LossKind, TrainOptions,
};
