//! Minimal tensor autodiff and the graph-attention model used to embed MILP
//! instances: a shared trunk, per-task heads, contrastive loss, Adam and a
//! binary checkpoint format.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::{head_hash, trunk_hash, Checkpoint, HeadRole};
pub use loss::{infonce_forward, infonce_grad, TAU};
pub use model::{collect_grads, PredictionVector, Task, TaskHead, TrunkParams, EMBED_DIM, NUM_HEADS};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("graph does not match the trunk input schema: {0}")]
    SchemaMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("contrastive loss needs at least one positive sample")]
    NoPositives,
    #[error("backward already ran on this tape")]
    GraphFreed,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Trunk = TrunkParams<f32>;
pub type Head = TaskHead<f32>;
pub type Model = Checkpoint<f32>;
