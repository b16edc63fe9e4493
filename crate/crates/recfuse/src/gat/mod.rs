//! Heterogeneous graph-attention expert: per-sample user–item–feature
//! graphs, edge-typed multi-head attention, cosine+sigmoid CTR prediction,
//! and cross-entropy training with early stopping.

pub mod graph;
pub mod model;
pub mod oracle;
pub mod train;
pub mod vocab;

pub use graph::{
    build_graph, time_encode, EdgeType, HeteroGraph, NodeKind, EDGE_TYPES, NO_RATING_ROW,
    RATING_TABLE_ROWS,
};
pub use model::{AttnRecord, Forward, GatAblation, GatConfig, GatModel};
pub use oracle::oracle_layer;
pub use train::{train_gat, GatTrainConfig, TrainedGat};
pub use vocab::{GatVocabs, Vocab};

use crate::numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatError {
    #[error("sample has empty history")]
    EmptyHistory,
    #[error("negative time gap {0} (history must precede target)")]
    NegativeDelta(i64),
    #[error("embedding dim {d} must be even and divisible by heads {heads}")]
    BadDims { d: usize, heads: usize },
    #[error("layers must be >= 1")]
    NoLayers,
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("training diverged (non-finite loss) at epoch {epoch} batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metrics(#[from] crate::harness::metrics::MetricsError),
}
