//! Desk-scale CTR recommendation pipeline: a heterogeneous graph-attention
//! expert over user/item/feature nodes with numerical (rating, time-gap) and
//! categorical inputs, whose target-item embedding is injected as a single
//! soft token into a small trainable causal language model fed by a
//! retrieval-plus-recency prompt.

pub mod dataset;
pub mod gat;
pub mod harness;
pub mod kb;
pub mod lm;
pub mod numerics;
pub mod rap;
pub mod text;

pub(crate) mod hashing;
