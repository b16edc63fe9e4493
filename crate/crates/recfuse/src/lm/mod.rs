//! Surrogate decoder-only causal LM with low-rank adapters on attention Q/V,
//! soft injection of the mapped expert embedding at the placeholder slot,
//! answer-token instruction tuning, and Yes/No scoring.

pub mod model;
pub mod tokenizer;
pub mod train;

pub use model::{EncodedPrompt, LmConfig, LoraConfig, SurrogateLM};
pub use tokenizer::Tokenizer;
pub use train::{finetune, score_prompts, score_yes_no, LmTrainConfig};

use crate::numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("model dim {d} not divisible by heads {heads}")]
    BadDims { d: usize, heads: usize },
    #[error("prompt needs {len} tokens but only {max} fit even after truncation")]
    PromptTooLong { len: usize, max: usize },
    #[error("prompt has no injection placeholder")]
    MissingPlaceholder,
    #[error("empty prompt set: {0}")]
    EmptyPrompts(&'static str),
    #[error("training diverged (non-finite loss) at step {0}")]
    Diverged(usize),
    #[error("expert embedding dim {got} does not match the map input {expected}")]
    ExpertDim { got: usize, expected: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
