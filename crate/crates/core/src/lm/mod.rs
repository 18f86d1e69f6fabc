//! A compact prompt-conditioned autoregressive tile model.
//!
//! Decoder-only transformer over category tokens. Each block applies causal
//! self-attention, cross-attention to a five-row prompt memory, and a GELU
//! MLP, each behind a pre-layer-norm residual. The prompt memory row `i` is
//! entry `(feature i, level)` of a learned 15-row table.
//!
//! Forward and backward passes are written out by hand over flat parameter
//! buffers and are generic over `f32` (training, sampling) and `f64`
//! (gradient checks).

mod checkpoint;
mod model;
mod ops;
mod sample;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use model::{Batch, Model, ParamIndex, LayerIndex};
pub use ops::Scalar;
pub use sample::{Decoder, Sampled, SamplingParams};
pub use train::{accuracy, encode_record, make_batch, split_holdout, train, ExampleSeq, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::catalog::FunctionalCategory;
use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;

/// Token ids: the 7 categories in declaration order, then start, end, pad.
pub const START: u32 = 7;
pub const END: u32 = 8;
pub const PAD: u32 = 9;
pub const VOCAB: usize = 10;
pub const CATEGORY_TOKENS: usize = 7;
pub const PROMPT_ROWS: usize = FEATURE_COUNT;
pub const PROMPT_TABLE: usize = FEATURE_COUNT * 3;

pub fn category_token(cat: FunctionalCategory) -> u32 {
    cat.index() as u32
}

pub fn token_category(tok: u32) -> Option<FunctionalCategory> {
    FunctionalCategory::from_index(tok as usize)
}

pub fn char_token(c: char) -> Option<u32> {
    match c {
        crate::dataset::START_TOKEN => Some(START),
        crate::dataset::END_TOKEN => Some(END),
        _ => FunctionalCategory::from_token_char(c).map(category_token),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub context: usize,
}

impl ModelConfig {
    /// Desk configuration for a 12×8 site.
    pub fn desk() -> Self {
        ModelConfig {
            vocab: VOCAB,
            layers: 4,
            heads: 4,
            model_dim: 128,
            ff_dim: 512,
            context: 512,
        }
    }

    /// Small configuration used where compute is tight.
    pub fn small(context: usize) -> Self {
        ModelConfig {
            vocab: VOCAB,
            layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 256,
            context,
        }
    }

    pub fn micro() -> Self {
        ModelConfig {
            vocab: VOCAB,
            layers: 2,
            heads: 2,
            model_dim: 8,
            ff_dim: 16,
            context: 8,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab != VOCAB {
            return Err(Error::Config(format!("vocab must be {VOCAB}, got {}", self.vocab)));
        }
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 || self.context < 2 {
            return Err(Error::Config("model dimensions must be positive, context at least 2".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        ParamIndex::new(self).total
    }
}
