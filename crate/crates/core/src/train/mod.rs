//! Optimization, training loops, evaluation, cross-validation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod kfold;
pub mod optim;
pub mod trainer;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DataConfig, EmbeddingConfig, EmbeddingKind, Mode, RunConfig};
pub use eval::{evaluate, predict_logits, EvalReport};
pub use kfold::{averaged_accuracy, cross_validate, fold_seed, kfold_split, CvSummary, FoldResult};
pub use optim::{cosine_anneal_lr, AdamW, ADAM_EPS};
pub use trainer::{argmax, batch_tensor, train_one_model, EpochStats, Supervision, TrainOutput, PROJECTION};
